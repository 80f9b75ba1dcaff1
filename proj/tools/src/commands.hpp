#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include <json.hpp>

#include <caviar/domain.hpp>
#include <caviar/embed.hpp>

#include "config.hpp"

namespace caviar::cli {

/// A pipeline stage failed; the message starts with the stage name.
class StageError : public Error {
 public:
  using Error::Error;
};

/**
 * Output directory of one or more commands. Each command writes its files, then a
 * resolved-config echo (config.<command>.json) and its entry in manifest.json:
 * outputs with byte counts and FNV-1a hashes plus a command summary. Nothing
 * time-dependent is recorded, so identical inputs give identical bytes.
 */
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root);

  std::filesystem::path file(std::string_view name) const { return root_ / name; }
  const std::filesystem::path& root() const { return root_; }

  /// Registers an already-written output.
  void record(std::string_view name);
  void write(std::string_view name, const std::string& content);

  void finish(std::string_view command, const RunConfig& config, nlohmann::json summary);

 private:
  std::filesystem::path root_;
  nlohmann::json outputs_ = nlohmann::json::array();
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

/// Keeps the first `digits` characters of every key, regrouping the levels. 0 is a no-op.
std::string truncate_key(std::string_view key, int digits);
ObservationTable truncate_levels(const ObservationTable& data, int digits, LevelRegistry seed = {});

/// Groups attribute rows by truncated key: columns are averaged, "population" is summed,
/// the first member's text is kept.
LevelAttributeTable aggregate_attributes(const LevelRegistry& levels, const LevelAttributeTable& attrs, int digits,
                                         LevelRegistry& grouped);

/// Forwards to another encoder, counting batches and texts.
class CountingEncoder : public Encoder {
 public:
  explicit CountingEncoder(Encoder& inner) : inner_(inner) {}
  std::string model_id() const override { return inner_.model_id(); }
  std::size_t max_batch_size() const override { return inner_.max_batch_size(); }
  RetryPolicy retry_policy() const override { return inner_.retry_policy(); }
  std::vector<std::vector<double>> encode_batch(std::span<const std::string> texts) override;

  std::size_t calls() const { return calls_; }
  std::size_t texts() const { return texts_; }

 private:
  Encoder& inner_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> texts_{0};
};

std::unique_ptr<Encoder> make_encoder(const EmbedSection& embed);

/// Each returns the process exit code. Failures surface as exceptions.
int cmd_simulate(RunConfig config, Streams io);
int cmd_embed(RunConfig config, Streams io);
int cmd_fit(RunConfig config, Streams io);
int cmd_report(RunConfig config, Streams io);
/// Runs simulate, all four estimators and diagnostics; 1 when any acceptance band fails.
int cmd_replicate(RunConfig config, Streams io);
int cmd_encode_cache(RunConfig config, Streams io);

}  // namespace caviar::cli
