#pragma once

#include <string>

#include "mdpcf/mdp_core.hpp"

/// JSON (de)serialization for models and strategies.
///
/// Model schema:
///   {"states":      [{"id": int, "label": str}, ...],
///    "actions":     [{"id": int, "label": str}, ...],
///    "initial":     int,
///    "transitions": [{"from": int, "action": int,
///                     "to": [{"state": int, "prob": real}, ...]}, ...],
///    "controllable": [int, ...]}          // optional
///
/// Strategy schema:
///   {"choices": [{"state": int, "actions": [{"action": int, "prob": real},
///                                           ...]}, ...]}
///
/// Ids are mapped to dense indices in declaration order; the writers emit
/// id == index, so parse/serialize round-trips to a canonical form.
namespace mdpcf {

/// Raised on malformed files; the message carries the offending path and,
/// for syntax errors, the parser's position information.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

Mdp parse_mdp_json(const std::string& text, const std::string& origin = "<string>");
Mdp load_mdp(const std::string& path);
std::string mdp_to_json(const Mdp& m);

/// Parses strategy JSON to raw rows; state/action ids are translated to the
/// indices of m. Validation is left to validate_strategy / make_strategy.
RawStrategy parse_strategy_json(const Mdp& m, const std::string& text,
                                const std::string& origin = "<string>");
Strategy load_strategy(const Mdp& m, const std::string& path);
std::string strategy_to_json(const Strategy& sigma);

/// Reads an entire file; throws IoError when the file cannot be opened.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace mdpcf
