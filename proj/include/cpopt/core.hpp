#pragma once

// Domain types shared by every module: the mixed continuous/discrete action
// space, logged interactions, and the dataset with its CSV representation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cpopt/error.hpp"

namespace cpopt {

struct ContinuousDim {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const ContinuousDim&) const = default;
};

struct DiscreteDim {
  std::vector<double> levels;  // strictly increasing, at least two
  bool operator==(const DiscreteDim&) const = default;
};

using DimSpec = std::variant<ContinuousDim, DiscreteDim>;

class ActionSpace {
 public:
  ActionSpace() = default;
  explicit ActionSpace(std::vector<DimSpec> dims);

  std::size_t size() const { return dims_.size(); }
  const DimSpec& dim(std::size_t i) const { return dims_.at(i); }
  const std::vector<DimSpec>& dims() const { return dims_; }

  bool is_discrete(std::size_t i) const {
    return std::holds_alternative<DiscreteDim>(dims_[i]);
  }
  const std::vector<double>& levels(std::size_t i) const;

  // Relaxed box: discrete dims span [first level, last level].
  double lower(std::size_t i) const { return lower_[i]; }
  double upper(std::size_t i) const { return upper_[i]; }
  double range(std::size_t i) const { return upper_[i] - lower_[i]; }

  double to_unit(std::size_t i, double v) const { return (v - lower_[i]) / range(i); }
  double from_unit(std::size_t i, double u) const { return lower_[i] + u * range(i); }

  std::size_t continuous_count() const;
  std::size_t discrete_count() const { return size() - continuous_count(); }

  // Normalized L-infinity distance: every dim mapped onto [0, 1] first.
  double unit_distance(std::span<const double> a, std::span<const double> b) const;

  // The 14-dimensional benchmark space: 8 continuous and 6 discrete dims.
  static ActionSpace default_benchmark();

  bool operator==(const ActionSpace& other) const { return dims_ == other.dims_; }

 private:
  std::vector<DimSpec> dims_;
  std::vector<double> lower_;
  std::vector<double> upper_;
};

enum class ViolationKind { kOutOfBox, kNotALevel, kNotFinite };

struct DimViolation {
  std::size_t dim;
  ViolationKind kind;
  double value;
};

struct ActionVerdict {
  std::vector<DimViolation> violations;

  bool valid() const { return violations.empty(); }
  std::string describe() const;
};

// Per-dimension check of an action. Throws ShapeError when the length does
// not match the space; everything else is reported in the verdict.
ActionVerdict validate_action(const ActionSpace& space, std::span<const double> action);

// Throws ValidationError carrying the verdict description if invalid.
void require_valid_action(const ActionSpace& space, std::span<const double> action,
                          const std::string& where = "action");

using Context = std::vector<double>;

// Propensity written on fictitious (counterfactual) records. Such records
// carry no logging density and must not enter importance-weighted estimators.
inline constexpr double kCounterfactualPropensity = -1.0;

struct LoggedInteraction {
  Context context;
  std::vector<double> action;
  double reward = 0.0;
  double propensity = 1.0;

  bool is_counterfactual() const { return propensity == kCounterfactualPropensity; }
  bool operator==(const LoggedInteraction&) const = default;
};

// Immutable collection of logged interactions over one action space.
class Dataset {
 public:
  Dataset(ActionSpace space, std::size_t context_dim, std::vector<LoggedInteraction> records);

  const ActionSpace& space() const { return space_; }
  std::size_t context_dim() const { return context_dim_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<LoggedInteraction>& records() const { return records_; }
  const LoggedInteraction& operator[](std::size_t i) const { return records_[i]; }

  std::size_t input_dim() const { return context_dim_ + space_.size(); }
  // [context; action] of record i.
  std::vector<double> input(std::size_t i) const;
  std::vector<Context> contexts() const;
  std::vector<double> rewards() const;

  bool has_counterfactual() const;

 private:
  ActionSpace space_;
  std::size_t context_dim_;
  std::vector<LoggedInteraction> records_;
};

std::vector<double> concat(std::span<const double> context, std::span<const double> action);

// CSV header: ctx_0..ctx_{d-1}, act_0..act_{n-1}, reward, propensity.
std::string dataset_csv_header(std::size_t context_dim, std::size_t action_dim);
void write_dataset_csv(const Dataset& dataset, std::ostream& out);
Dataset read_dataset_csv(std::istream& in, const ActionSpace& space);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, const ActionSpace& space);

// N draws with replacement, uniform over records.
Dataset bootstrap_sample(const Dataset& dataset, std::uint64_t seed);

// Random partition without replacement; record order inside each part
// follows the original order.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, std::size_t heldout_count,
                                          std::uint64_t seed);

// Record indices used by split_dataset, exposed for tests and reports.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, std::size_t heldout_count, std::uint64_t seed);

}  // namespace cpopt
