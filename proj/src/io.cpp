#include "cpopt/io.hpp"

#include <sstream>

#include "cpopt/text.hpp"

namespace cpopt {

nlohmann::json space_to_json(const ActionSpace& space) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : space.dims()) {
    if (const auto* c = std::get_if<ContinuousDim>(&d)) {
      dims.push_back({{"kind", "continuous"}, {"lo", c->lo}, {"hi", c->hi}});
    } else {
      dims.push_back({{"kind", "discrete"}, {"levels", std::get<DiscreteDim>(d).levels}});
    }
  }
  return {{"dims", dims}};
}

ActionSpace space_from_json(const nlohmann::json& j) {
  std::vector<DimSpec> dims;
  for (const auto& d : j.at("dims")) {
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "continuous") {
      dims.emplace_back(ContinuousDim{d.at("lo").get<double>(), d.at("hi").get<double>()});
    } else if (kind == "discrete") {
      dims.emplace_back(DiscreteDim{d.at("levels").get<std::vector<double>>()});
    } else {
      throw ValidationError("unknown dim kind '" + kind + "'");
    }
  }
  return ActionSpace(std::move(dims));
}

std::string dim_to_string(const DimSpec& dim) {
  std::string out;
  if (const auto* c = std::get_if<ContinuousDim>(&dim)) {
    out = "continuous " + format_double(c->lo) + " " + format_double(c->hi);
  } else {
    out = "discrete";
    for (double l : std::get<DiscreteDim>(dim).levels) out += " " + format_double(l);
  }
  return out;
}

DimSpec dim_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  in >> kind;
  std::vector<double> values;
  std::string tok;
  while (in >> tok) {
    const auto v = parse_double(tok);
    if (!v) throw ValidationError("dim spec '" + text + "': bad number '" + tok + "'");
    values.push_back(*v);
  }
  if (kind == "continuous") {
    if (values.size() != 2) throw ValidationError("dim spec '" + text + "': continuous needs lo hi");
    return ContinuousDim{values[0], values[1]};
  }
  if (kind == "discrete") {
    if (values.size() < 2) throw ValidationError("dim spec '" + text + "': discrete needs at least two levels");
    return DiscreteDim{std::move(values)};
  }
  throw ValidationError("dim spec '" + text + "': kind must be continuous or discrete");
}

}  // namespace cpopt
