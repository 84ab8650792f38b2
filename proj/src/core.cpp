#include "cpopt/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cpopt/rng.hpp"
#include "cpopt/text.hpp"

namespace cpopt {

namespace {

bool matches_level(double v, double level) {
  return std::abs(v - level) <= 1e-9 * std::max(1.0, std::abs(level));
}

const char* kind_name(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kOutOfBox:
      return "out of box";
    case ViolationKind::kNotALevel:
      return "not a listed level";
    case ViolationKind::kNotFinite:
      return "not finite";
  }
  return "?";
}

}  // namespace

ActionSpace::ActionSpace(std::vector<DimSpec> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw ValidationError("action space needs at least one dimension");
  lower_.reserve(dims_.size());
  upper_.reserve(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (const auto* c = std::get_if<ContinuousDim>(&dims_[i])) {
      if (!(std::isfinite(c->lo) && std::isfinite(c->hi) && c->lo < c->hi)) {
        throw ValidationError("dim " + std::to_string(i) + ": continuous bounds need lo < hi");
      }
      lower_.push_back(c->lo);
      upper_.push_back(c->hi);
    } else {
      const auto& levels = std::get<DiscreteDim>(dims_[i]).levels;
      if (levels.size() < 2) {
        throw ValidationError("dim " + std::to_string(i) + ": discrete dim needs >= 2 levels");
      }
      for (std::size_t j = 0; j < levels.size(); ++j) {
        if (!std::isfinite(levels[j]) || (j > 0 && !(levels[j - 1] < levels[j]))) {
          throw ValidationError("dim " + std::to_string(i) +
                                ": levels must be finite and strictly increasing");
        }
      }
      lower_.push_back(levels.front());
      upper_.push_back(levels.back());
    }
  }
}

const std::vector<double>& ActionSpace::levels(std::size_t i) const {
  return std::get<DiscreteDim>(dims_.at(i)).levels;
}

std::size_t ActionSpace::continuous_count() const {
  return static_cast<std::size_t>(std::count_if(dims_.begin(), dims_.end(), [](const DimSpec& d) {
    return std::holds_alternative<ContinuousDim>(d);
  }));
}

double ActionSpace::unit_distance(std::span<const double> a, std::span<const double> b) const {
  if (a.size() != size() || b.size() != size()) throw ShapeError("unit_distance: length mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    d = std::max(d, std::abs(to_unit(i, a[i]) - to_unit(i, b[i])));
  }
  return d;
}

ActionSpace ActionSpace::default_benchmark() {
  return ActionSpace({
      ContinuousDim{0.0, 1.0},
      ContinuousDim{0.0, 1.0},
      DiscreteDim{{0.0, 0.5, 1.0}},
      ContinuousDim{-0.5, 0.5},
      DiscreteDim{{0.0, 1.0}},
      ContinuousDim{0.0, 1.0},
      DiscreteDim{{0.0, 0.25, 0.5, 0.75, 1.0}},
      ContinuousDim{0.0, 1.5},
      ContinuousDim{0.0, 1.0},
      DiscreteDim{{0.0, 0.3, 0.6, 0.9}},
      ContinuousDim{0.2, 1.2},
      DiscreteDim{{0.0, 0.5, 1.0}},
      ContinuousDim{0.0, 1.0},
      DiscreteDim{{0.0, 0.2, 0.4, 0.6, 0.8, 1.0}},
  });
}

std::string ActionVerdict::describe() const {
  if (valid()) return "valid";
  std::ostringstream os;
  for (std::size_t k = 0; k < violations.size(); ++k) {
    const auto& v = violations[k];
    if (k) os << "; ";
    os << "dim " << v.dim << " " << kind_name(v.kind) << " (" << format_double(v.value) << ")";
  }
  return os.str();
}

ActionVerdict validate_action(const ActionSpace& space, std::span<const double> action) {
  if (action.size() != space.size()) {
    throw ShapeError("action has " + std::to_string(action.size()) + " entries, space has " +
                     std::to_string(space.size()) + " dims");
  }
  ActionVerdict verdict;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double v = action[i];
    if (!std::isfinite(v)) {
      verdict.violations.push_back({i, ViolationKind::kNotFinite, v});
    } else if (space.is_discrete(i)) {
      const auto& levels = space.levels(i);
      if (std::none_of(levels.begin(), levels.end(),
                       [v](double l) { return matches_level(v, l); })) {
        verdict.violations.push_back({i, ViolationKind::kNotALevel, v});
      }
    } else if (v < space.lower(i) || v > space.upper(i)) {
      verdict.violations.push_back({i, ViolationKind::kOutOfBox, v});
    }
  }
  return verdict;
}

void require_valid_action(const ActionSpace& space, std::span<const double> action,
                          const std::string& where) {
  const auto verdict = validate_action(space, action);
  if (!verdict.valid()) throw ValidationError(where + " invalid: " + verdict.describe());
}

Dataset::Dataset(ActionSpace space, std::size_t context_dim, std::vector<LoggedInteraction> records)
    : space_(std::move(space)), context_dim_(context_dim), records_(std::move(records)) {
  if (records_.empty()) throw ValidationError("dataset must contain at least one record");
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    const std::string where = "record " + std::to_string(i);
    if (r.context.size() != context_dim_) {
      throw ShapeError(where + ": context has " + std::to_string(r.context.size()) +
                       " entries, expected " + std::to_string(context_dim_));
    }
    if (!std::all_of(r.context.begin(), r.context.end(), [](double x) { return std::isfinite(x); })) {
      throw ValidationError(where + ": non-finite context entry");
    }
    require_valid_action(space_, r.action, where + " action");
    if (!std::isfinite(r.reward)) throw ValidationError(where + ": non-finite reward");
    if (!r.is_counterfactual() && !(r.propensity > 0.0 && std::isfinite(r.propensity))) {
      throw ValidationError(where + ": propensity must be > 0");
    }
  }
}

std::vector<double> concat(std::span<const double> context, std::span<const double> action) {
  std::vector<double> x;
  x.reserve(context.size() + action.size());
  x.insert(x.end(), context.begin(), context.end());
  x.insert(x.end(), action.begin(), action.end());
  return x;
}

std::vector<double> Dataset::input(std::size_t i) const {
  return concat(records_[i].context, records_[i].action);
}

std::vector<Context> Dataset::contexts() const {
  std::vector<Context> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.context);
  return out;
}

std::vector<double> Dataset::rewards() const {
  std::vector<double> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.reward);
  return out;
}

bool Dataset::has_counterfactual() const {
  return std::any_of(records_.begin(), records_.end(),
                     [](const LoggedInteraction& r) { return r.is_counterfactual(); });
}

std::string dataset_csv_header(std::size_t context_dim, std::size_t action_dim) {
  std::string h;
  for (std::size_t i = 0; i < context_dim; ++i) h += "ctx_" + std::to_string(i) + ",";
  for (std::size_t i = 0; i < action_dim; ++i) h += "act_" + std::to_string(i) + ",";
  h += "reward,propensity";
  return h;
}

void write_dataset_csv(const Dataset& dataset, std::ostream& out) {
  out << dataset_csv_header(dataset.context_dim(), dataset.space().size()) << '\n';
  std::string line;
  for (const auto& r : dataset.records()) {
    line.clear();
    for (double v : r.context) line += format_double(v) + ',';
    for (double v : r.action) line += format_double(v) + ',';
    line += format_double(r.reward) + ',' + format_double(r.propensity) + '\n';
    out << line;
  }
}

Dataset read_dataset_csv(std::istream& in, const ActionSpace& space) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(0, "header", "empty file");
  const auto header = split(trim(line), ',');
  std::size_t context_dim = 0;
  while (context_dim < header.size() &&
         trim(header[context_dim]) == "ctx_" + std::to_string(context_dim)) {
    ++context_dim;
  }
  if (context_dim == 0) throw ParseError(0, "header", "expected ctx_0 as first column");
  const std::string expected = dataset_csv_header(context_dim, space.size());
  const auto expected_cols = split(expected, ',');
  if (header.size() != expected_cols.size()) {
    throw ParseError(0, "header", "expected " + std::to_string(expected_cols.size()) +
                                      " columns for a " + std::to_string(space.size()) +
                                      "-dim action space, found " + std::to_string(header.size()));
  }
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (trim(header[c]) != expected_cols[c]) {
      throw ParseError(0, std::string(expected_cols[c]),
                       "unexpected column name '" + std::string(trim(header[c])) + "'");
    }
  }

  std::vector<LoggedInteraction> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split(trim(line), ',');
    if (cells.size() != expected_cols.size()) {
      throw ParseError(row, "*", "expected " + std::to_string(expected_cols.size()) +
                                     " fields, found " + std::to_string(cells.size()));
    }
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(row, std::string(expected_cols[c]),
                         "not a finite number: '" + std::string(cells[c]) + "'");
      }
      values[c] = *v;
    }
    LoggedInteraction rec;
    rec.context.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(context_dim));
    rec.action.assign(values.begin() + static_cast<std::ptrdiff_t>(context_dim),
                      values.begin() + static_cast<std::ptrdiff_t>(context_dim + space.size()));
    rec.reward = values[context_dim + space.size()];
    rec.propensity = values.back();
    if (!(rec.propensity > 0.0) && !rec.is_counterfactual()) {
      throw ParseError(row, "propensity", "propensity must be > 0, got " + format_double(rec.propensity));
    }
    const auto verdict = validate_action(space, rec.action);
    if (!verdict.valid()) {
      throw ParseError(row, "act_" + std::to_string(verdict.violations.front().dim),
                       verdict.describe());
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw ParseError(0, "*", "file contains no records");
  return Dataset(space, context_dim, std::move(records));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_dataset_csv(dataset, out);
  if (!out) throw Error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, const ActionSpace& space) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_dataset_csv(in, space);
}

Dataset bootstrap_sample(const Dataset& dataset, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (n == 0) throw ValidationError("bootstrap_sample: empty dataset");
  Rng rng = make_rng(seed);
  std::vector<LoggedInteraction> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(dataset[uniform_index(rng, n)]);
  return Dataset(dataset.space(), dataset.context_dim(), std::move(out));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, std::size_t heldout_count, std::uint64_t seed) {
  if (heldout_count == 0 || heldout_count >= n) {
    throw ValidationError("split: heldout_count must satisfy 0 < heldout < N (got " +
                          std::to_string(heldout_count) + " of " + std::to_string(n) + ")");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed);
  // Partial Fisher-Yates: the first heldout_count slots are the heldout draw.
  for (std::size_t i = 0; i < heldout_count; ++i) {
    const std::size_t j = i + uniform_index(rng, n - i);
    std::swap(perm[i], perm[j]);
  }
  std::vector<bool> is_heldout(n, false);
  for (std::size_t i = 0; i < heldout_count; ++i) is_heldout[perm[i]] = true;
  std::vector<std::size_t> train, heldout;
  train.reserve(n - heldout_count);
  heldout.reserve(heldout_count);
  for (std::size_t i = 0; i < n; ++i) (is_heldout[i] ? heldout : train).push_back(i);
  return {std::move(train), std::move(heldout)};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, std::size_t heldout_count,
                                          std::uint64_t seed) {
  const auto [train_idx, heldout_idx] = split_indices(dataset.size(), heldout_count, seed);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<LoggedInteraction> recs;
    recs.reserve(idx.size());
    for (auto i : idx) recs.push_back(dataset[i]);
    return Dataset(dataset.space(), dataset.context_dim(), std::move(recs));
  };
  return {gather(train_idx), gather(heldout_idx)};
}

}  // namespace cpopt
