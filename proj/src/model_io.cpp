#include "shellsde/model_io.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "shellsde/errors.hpp"
#include "shellsde/presets.hpp"

namespace shellsde {

namespace {

ParseError field_error(const std::string& path, const std::string& what) {
  return ParseError(path + ": " + what, 0, 0);
}

double number_at(const json& obj, const std::string& key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw field_error(path, "missing field '" + key + "'");
  if (!it->is_number()) throw field_error(path + "." + key, "expected a number");
  return it->get<double>();
}

int integer_at(const json& obj, const std::string& key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw field_error(path, "missing field '" + key + "'");
  if (!it->is_number_integer()) throw field_error(path + "." + key, "expected an integer");
  return it->get<int>();
}

const std::map<std::string, std::map<std::string, double>>& preset_defaults() {
  static const std::map<std::string, std::map<std::string, double>> d = {
      {"goy", {{"a", 1.0}, {"b", -1.5}, {"c", 0.5}, {"lambda", 2.0}, {"sigma_tilde", 1.0}}},
      {"sabra",
       {{"a", 1.0}, {"b", -1.25}, {"c", 0.25}, {"lambda", 2.0}, {"sigma1_tilde", 1.0},
        {"sigma2_tilde", 0.125}}},
      {"novikov", {{"lambda", 2.0}, {"sigma", 1.0}}},
  };
  return d;
}

ModelSpec build_preset(const std::string& name, const std::map<std::string, double>& given,
                       const std::string& where) {
  const auto& defaults = preset_defaults();
  const auto it = defaults.find(name);
  if (it == defaults.end())
    throw field_error(where, "unknown preset '" + name + "' (expected goy, sabra or novikov)");
  auto p = it->second;
  for (const auto& [k, v] : given) {
    if (!p.count(k)) throw field_error(where, "preset '" + name + "' has no parameter '" + k + "'");
    p[k] = v;
  }
  if (name == "goy") return build_goy(p["a"], p["b"], p["c"], p["lambda"], p["sigma_tilde"]);
  if (name == "sabra")
    return build_sabra(p["a"], p["b"], p["c"], p["lambda"], p["sigma1_tilde"], p["sigma2_tilde"]);
  return build_novikov(p["lambda"], p["sigma"]);
}

BilinearMap named_bilinear(const std::string& name, const std::string& path) {
  if (name == "goy") return goy_bilinear();
  if (name == "sabra_conj_first") return sabra_bilinear_conj_first();
  if (name == "sabra_plain") return sabra_bilinear_plain();
  if (name == "sabra_conj_second") return sabra_bilinear_conj_second();
  if (name == "product") return BilinearMap(1, {1.0});
  throw field_error(path, "unknown bilinear map '" + name + "'");
}

BilinearMap bilinear_from_json(const json& b, int dim, const std::string& path) {
  if (b.is_string()) {
    auto m = named_bilinear(b.get<std::string>(), path);
    if (m.dim() != dim) throw field_error(path, "named bilinear map has the wrong dimension");
    return m;
  }
  if (!b.is_array() || static_cast<int>(b.size()) != dim)
    throw field_error(path, "expected a " + std::to_string(dim) + "x" + std::to_string(dim) +
                                "x" + std::to_string(dim) + " nested array");
  std::vector<double> entries;
  for (std::size_t a = 0; a < b.size(); ++a) {
    const auto& plane = b[a];
    if (!plane.is_array() || static_cast<int>(plane.size()) != dim)
      throw field_error(path + "[" + std::to_string(a) + "]", "wrong shape");
    for (std::size_t c = 0; c < plane.size(); ++c) {
      const auto& row = plane[c];
      if (!row.is_array() || static_cast<int>(row.size()) != dim)
        throw field_error(path + "[" + std::to_string(a) + "][" + std::to_string(c) + "]",
                          "wrong shape");
      for (const auto& v : row) {
        if (!v.is_number()) throw field_error(path, "entries must be numbers");
        entries.push_back(v.get<double>());
      }
    }
  }
  return BilinearMap(dim, std::move(entries));
}

}  // namespace

bool looks_like_preset(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  return preset_defaults().count(name) > 0;
}

ModelSpec parse_preset(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  std::map<std::string, double> given;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        throw ParseError("preset parameter '" + item + "' is not of the form name=value", 0, 0);
      const std::string key = item.substr(0, eq);
      const std::string val = item.substr(eq + 1);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(val, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != val.size())
        throw ParseError("preset parameter '" + key + "' has a malformed value '" + val + "'", 0,
                         0);
      given[key] = v;
    }
  }
  return build_preset(name, given, "preset '" + text + "'");
}

ModelSpec model_from_json(const json& doc) {
  if (!doc.is_object()) throw field_error("model", "expected an object");
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw field_error("model.preset", "expected a string");
    std::map<std::string, double> given;
    for (const auto& [k, v] : doc.items()) {
      if (k == "preset") continue;
      if (!v.is_number()) throw field_error("model." + k, "expected a number");
      given[k] = v.get<double>();
    }
    return build_preset(doc["preset"].get<std::string>(), given, "model");
  }
  ModelSpec spec;
  spec.dim = integer_at(doc, "dim", "model");
  if (spec.dim < 1) throw field_error("model.dim", "must be >= 1");
  spec.lambda = number_at(doc, "lambda", "model");
  spec.sigma = number_at(doc, "sigma", "model");
  const auto it = doc.find("interactions");
  if (it == doc.end() || !it->is_array() || it->empty())
    throw field_error("model.interactions", "expected a non-empty array");
  std::map<std::string, int> index;
  for (std::size_t j = 0; j < it->size(); ++j) {
    const auto& e = (*it)[j];
    const std::string path = "model.interactions[" + std::to_string(j) + "]";
    if (!e.is_object()) throw field_error(path, "expected an object");
    Interaction in;
    in.id = e.contains("id") ? (e["id"].is_string() ? e["id"].get<std::string>()
                                                     : e["id"].dump())
                             : std::to_string(j + 1);
    in.r = integer_at(e, "r", path);
    in.h = integer_at(e, "h", path);
    in.k = number_at(e, "k", path);
    if (!e.contains("B")) throw field_error(path, "missing field 'B'");
    in.b = bilinear_from_json(e["B"], spec.dim, path + ".B");
    if (index.count(in.id)) throw field_error(path + ".id", "duplicate id '" + in.id + "'");
    index[in.id] = static_cast<int>(j);
    spec.interactions.push_back(std::move(in));
  }
  auto id_of = [&](const json& v, const std::string& path) {
    const std::string key = v.is_string() ? v.get<std::string>() : v.dump();
    const auto f = index.find(key);
    if (f == index.end()) throw field_error(path, "unknown interaction id '" + key + "'");
    return f->second;
  };
  spec.pairing.assign(spec.interactions.size(), -1);
  const auto pit = doc.find("pairing");
  if (pit == doc.end() || !pit->is_array()) throw field_error("model.pairing", "expected an array of pairs");
  for (std::size_t j = 0; j < pit->size(); ++j) {
    const auto& pr = (*pit)[j];
    const std::string path = "model.pairing[" + std::to_string(j) + "]";
    if (!pr.is_array() || pr.size() != 2) throw field_error(path, "expected a pair [id, id]");
    const int x = id_of(pr[0], path), y = id_of(pr[1], path);
    if (spec.pairing[static_cast<std::size_t>(x)] != -1 ||
        spec.pairing[static_cast<std::size_t>(y)] != -1)
      throw field_error(path, "interaction paired twice");
    spec.pairing[static_cast<std::size_t>(x)] = y;
    spec.pairing[static_cast<std::size_t>(y)] = x;
  }
  const auto sit = doc.find("istar");
  if (sit == doc.end() || !sit->is_array()) throw field_error("model.istar", "expected an array of ids");
  for (std::size_t j = 0; j < sit->size(); ++j)
    spec.istar.push_back(id_of((*sit)[j], "model.istar[" + std::to_string(j) + "]"));
  for (std::size_t j = 0; j < spec.pairing.size(); ++j)
    if (spec.pairing[j] == -1) spec.pairing[j] = static_cast<int>(j);  // flagged by validation
  return spec;
}

json model_to_json(const ModelSpec& spec) {
  json doc;
  doc["dim"] = spec.dim;
  doc["lambda"] = spec.lambda;
  doc["sigma"] = spec.sigma;
  json inter = json::array();
  for (const auto& in : spec.interactions) {
    json b = json::array();
    for (int a = 0; a < spec.dim; ++a) {
      json plane = json::array();
      for (int c = 0; c < spec.dim; ++c) {
        json row = json::array();
        for (int e = 0; e < spec.dim; ++e) row.push_back(in.b(a, c, e));
        plane.push_back(row);
      }
      b.push_back(plane);
    }
    inter.push_back({{"id", in.id}, {"r", in.r}, {"h", in.h}, {"k", in.k}, {"B", b}});
  }
  doc["interactions"] = inter;
  json pairs = json::array();
  for (std::size_t i = 0; i < spec.pairing.size(); ++i) {
    const auto j = static_cast<std::size_t>(spec.pairing[i]);
    if (i < j) pairs.push_back({spec.interactions[i].id, spec.interactions[j].id});
  }
  doc["pairing"] = pairs;
  json istar = json::array();
  for (int i : spec.istar) istar.push_back(spec.interactions[static_cast<std::size_t>(i)].id);
  doc["istar"] = istar;
  if (!spec.origin.preset.empty()) {
    json origin{{"preset", spec.origin.preset}};
    for (const auto& [k, v] : spec.origin.params) origin[k] = v;
    doc["origin"] = origin;
  }
  return doc;
}

json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is the 1-based offset just past the offending character.
    const std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
    std::size_t line = 1, column = 1;
    for (std::size_t j = 0; j < byte && j < text.size(); ++j) {
      if (text[j] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string what = e.what();
    const auto pos = what.find("syntax error");
    if (pos != std::string::npos) what = what.substr(pos);
    std::ostringstream os;
    os << source << ":" << line << ":" << column << ": " << what;
    throw ParseError(os.str(), line, column);
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

ModelSpec load_model(const json& ref) {
  if (ref.is_object()) return model_from_json(ref);
  if (!ref.is_string()) throw field_error("model", "expected a preset string, file path or object");
  const auto text = ref.get<std::string>();
  if (looks_like_preset(text)) return parse_preset(text);
  return model_from_json(read_json_file(text));
}

}  // namespace shellsde
