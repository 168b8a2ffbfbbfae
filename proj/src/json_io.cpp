#include "mdpcf/json_io.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace mdpcf {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

json parse_or_throw(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(origin + ": " + e.what());
  }
}

const json& require_field(const json& obj, const char* key, const std::string& origin) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw IoError(origin + ": missing field '" + key + "'");
  }
  return *it;
}

/// Reads the "id"/"label" arrays and returns label list plus id->index map.
std::vector<std::string> read_labeled_list(const json& arr, const std::string& origin,
                                           const char* what,
                                           std::map<long long, int>& index_of) {
  if (!arr.is_array() || arr.empty()) {
    throw IoError(origin + ": '" + what + "' must be a nonempty array");
  }
  std::vector<std::string> labels;
  int index = 0;
  for (const auto& entry : arr) {
    long long id = require_field(entry, "id", origin).get<long long>();
    std::string label = require_field(entry, "label", origin).get<std::string>();
    if (!index_of.emplace(id, index).second) {
      throw IoError(origin + ": duplicate " + std::string(what) + " id " +
                    std::to_string(id));
    }
    labels.push_back(std::move(label));
    ++index;
  }
  return labels;
}

int lookup(const std::map<long long, int>& index_of, long long id,
           const std::string& origin, const char* what) {
  auto it = index_of.find(id);
  if (it == index_of.end()) {
    throw IoError(origin + ": unknown " + std::string(what) + " id " +
                  std::to_string(id));
  }
  return it->second;
}

}  // namespace

Mdp parse_mdp_json(const std::string& text, const std::string& origin) {
  json doc = parse_or_throw(text, origin);
  Mdp m;
  std::map<long long, int> state_index, action_index;
  m.state_labels = read_labeled_list(require_field(doc, "states", origin), origin,
                                     "state", state_index);
  m.action_labels = read_labeled_list(require_field(doc, "actions", origin), origin,
                                      "action", action_index);
  m.initial = lookup(state_index, require_field(doc, "initial", origin).get<long long>(),
                     origin, "state");
  m.transitions.resize(m.state_labels.size());

  const json& transitions = require_field(doc, "transitions", origin);
  if (!transitions.is_array()) throw IoError(origin + ": 'transitions' must be an array");
  for (const auto& entry : transitions) {
    int from = lookup(state_index, require_field(entry, "from", origin).get<long long>(),
                      origin, "state");
    int action = lookup(action_index,
                        require_field(entry, "action", origin).get<long long>(), origin,
                        "action");
    std::vector<std::pair<int, double>> successors;
    for (const auto& succ : require_field(entry, "to", origin)) {
      int to = lookup(state_index, require_field(succ, "state", origin).get<long long>(),
                      origin, "state");
      double prob = require_field(succ, "prob", origin).get<double>();
      successors.emplace_back(to, prob);
    }
    Transition t;
    t.action = action;
    try {
      t.successors = Distribution(std::move(successors));
    } catch (const ModelError& e) {
      throw IoError(origin + ": transition from state id " +
                    entry["from"].dump() + ": " + e.what());
    }
    auto& row = m.transitions[static_cast<size_t>(from)];
    for (const auto& existing : row) {
      if (existing.action == action) {
        throw IoError(origin + ": duplicate transition for (state, action) (" +
                      entry["from"].dump() + ", " + entry["action"].dump() + ")");
      }
    }
    row.push_back(std::move(t));
  }
  for (auto& row : m.transitions) {
    std::sort(row.begin(), row.end(),
              [](const Transition& a, const Transition& b) { return a.action < b.action; });
  }

  if (doc.contains("controllable")) {
    std::set<int> mask;
    for (const auto& id : doc["controllable"]) {
      mask.insert(lookup(state_index, id.get<long long>(), origin, "state"));
    }
    m.controllable = std::move(mask);
  }

  try {
    m.validate();
  } catch (const ModelError& e) {
    throw IoError(origin + ": " + e.what());
  }
  return m;
}

Mdp load_mdp(const std::string& path) { return parse_mdp_json(read_text_file(path), path); }

std::string mdp_to_json(const Mdp& m) {
  ordered_json doc;
  doc["states"] = ordered_json::array();
  for (int s = 0; s < m.num_states(); ++s) {
    doc["states"].push_back({{"id", s}, {"label", m.state_labels[static_cast<size_t>(s)]}});
  }
  doc["actions"] = ordered_json::array();
  for (int a = 0; a < m.num_actions(); ++a) {
    doc["actions"].push_back({{"id", a}, {"label", m.action_labels[static_cast<size_t>(a)]}});
  }
  doc["initial"] = m.initial;
  doc["transitions"] = ordered_json::array();
  for (int s = 0; s < m.num_states(); ++s) {
    for (const auto& t : m.transitions[static_cast<size_t>(s)]) {
      ordered_json to = ordered_json::array();
      for (const auto& [succ, p] : t.successors.support()) {
        to.push_back({{"state", succ}, {"prob", p}});
      }
      doc["transitions"].push_back(
          {{"from", s}, {"action", t.action}, {"to", std::move(to)}});
    }
  }
  if (m.controllable) {
    doc["controllable"] = std::vector<int>(m.controllable->begin(), m.controllable->end());
  }
  return doc.dump(2) + "\n";
}

RawStrategy parse_strategy_json(const Mdp& m, const std::string& text,
                                const std::string& origin) {
  json doc = parse_or_throw(text, origin);
  std::map<long long, int> state_index, action_index;
  for (int s = 0; s < m.num_states(); ++s) state_index[s] = s;
  for (int a = 0; a < m.num_actions(); ++a) action_index[a] = a;

  RawStrategy raw;
  for (const auto& entry : require_field(doc, "choices", origin)) {
    int s = lookup(state_index, require_field(entry, "state", origin).get<long long>(),
                   origin, "state");
    std::vector<std::pair<int, double>> row;
    for (const auto& choice : require_field(entry, "actions", origin)) {
      int a = lookup(action_index,
                     require_field(choice, "action", origin).get<long long>(), origin,
                     "action");
      row.emplace_back(a, require_field(choice, "prob", origin).get<double>());
    }
    raw.rows.emplace_back(s, std::move(row));
  }
  return raw;
}

Strategy load_strategy(const Mdp& m, const std::string& path) {
  try {
    return make_strategy(m, parse_strategy_json(m, read_text_file(path), path));
  } catch (const ModelError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string strategy_to_json(const Strategy& sigma) {
  ordered_json doc;
  doc["choices"] = ordered_json::array();
  for (size_t s = 0; s < sigma.choices.size(); ++s) {
    ordered_json actions = ordered_json::array();
    for (const auto& [a, p] : sigma.choices[s].support()) {
      actions.push_back({{"action", a}, {"prob", p}});
    }
    doc["choices"].push_back(
        {{"state", static_cast<int>(s)}, {"actions", std::move(actions)}});
  }
  return doc.dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace mdpcf
