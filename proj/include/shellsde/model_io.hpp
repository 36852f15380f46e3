#pragma once

#include <string>

#include "json.hpp"

#include "shellsde/model_spec.hpp"

namespace shellsde {

using json = nlohmann::json;

/// Parses "goy:a=1,b=-1.5,c=0.5,lambda=2,sigma_tilde=1",
/// "sabra:a=1,b=-1.25,c=0.25,lambda=2,sigma1_tilde=1,sigma2_tilde=0.125" or
/// "novikov:lambda=2,sigma=1". Missing parameters take the defaults shown in
/// the README. Throws ParseError for unknown names or malformed numbers.
ModelSpec parse_preset(const std::string& text);

/// True when `text` names a preset rather than a file.
bool looks_like_preset(const std::string& text);

/// Builds a model from a JSON document: either {"preset": name, params...}
/// or an explicit {"dim", "lambda", "sigma", "interactions", "pairing",
/// "istar"} description. Field errors are reported as ParseError naming the
/// JSON path (line and column 0).
ModelSpec model_from_json(const json& doc);
json model_to_json(const ModelSpec& spec);

/// Parses JSON text, mapping syntax errors to ParseError with the 1-based
/// line and column of the offending character.
json parse_json_text(const std::string& text, const std::string& source);
json read_json_file(const std::string& path);

/// A preset string, a path to a model file, or an inline JSON object.
ModelSpec load_model(const json& ref);

}  // namespace shellsde
