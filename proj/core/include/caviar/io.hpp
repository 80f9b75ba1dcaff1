#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "caviar/domain.hpp"
#include "caviar/embed.hpp"

namespace caviar::io {

/// Column roles for an observations CSV.
struct ObservationColumns {
  std::string outcome = "y";
  std::vector<std::string> covariates;
  std::string level = "level";
  std::vector<std::string> factors;
};

/**
 * Reads observations. Level keys are interned into `registry`, so a registry seeded
 * from an attribute file keeps attribute rows aligned with level indices.
 * Factor labels are ordered by first appearance; the first is the reference.
 */
ObservationTable read_observations(const std::filesystem::path& path, const ObservationColumns& columns,
                                   LevelRegistry registry = {});

/// Writes outcome, covariates, level key and factor labels in that column order.
void write_observations(const std::filesystem::path& path, const ObservationTable& data,
                        const std::string& level_column = "level");

struct AttributeFile {
  LevelRegistry levels;
  LevelAttributeTable attributes;
};

/// Every column except the key and the optional text column must be numeric.
AttributeFile read_attributes(const std::filesystem::path& path, const std::string& key_column,
                              const std::string& text_column = "");

void write_attributes(const std::filesystem::path& path, const LevelRegistry& levels,
                      const LevelAttributeTable& attributes, const std::string& key_column = "level");

/// Restricts or extends attribute rows to match `target`; throws listing keys without a row.
LevelAttributeTable align_attributes(const AttributeFile& source, const LevelRegistry& target);

/// Per-level reals keyed by level (truth, FE vectors). Missing keys read back as NaN.
void write_level_values(const std::filesystem::path& path, const LevelRegistry& levels, const Eigen::VectorXd& values,
                        const std::string& value_column);
Eigen::VectorXd read_level_values(const std::filesystem::path& path, const LevelRegistry& levels,
                                  const std::string& value_column, const std::string& key_column = "level");

/// key,x1..xJ rows. Reading aligns rows to `levels` and requires every level to be present.
void write_embedding(const std::filesystem::path& path, const LevelRegistry& levels, const EmbeddingMatrix& emb);
EmbeddingMatrix read_embedding(const std::filesystem::path& path, const LevelRegistry& levels);

/// Full FitResult, including the structured fixed-effect covariance and residuals.
std::string fit_to_json(const FitResult& fit, const LevelRegistry& levels, int indent = 1);
FitResult fit_from_json(const std::string& text, const LevelRegistry& levels);

/// key, fe, se, n, significant, status. `significant` may be empty (column left blank).
void write_fe_csv(const std::filesystem::path& path, const FitResult& fit, const LevelRegistry& levels,
                  const std::vector<bool>& significant = {});

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace caviar::io
