// SPDX-License-Identifier: Apache-2.0
#include "hgsg/hierarchy.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "hgsg/kmeans.hpp"

namespace hgsg {

namespace {

std::vector<std::string> split_tokens(const std::string& s) {
  std::istringstream in(s);
  return {std::istream_iterator<std::string>(in), std::istream_iterator<std::string>()};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

nlohmann::json parse_json(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t line = line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(source + ":" + std::to_string(line) + ": " + e.what(), line);
  }
}

}  // namespace

PredicateLexicon::PredicateLexicon(std::vector<LexiconEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].label.empty()) throw ValidationError("lexicon contains an empty label");
    if (!index_.emplace(entries_[i].label, i).second)
      throw ValidationError("lexicon label '" + entries_[i].label + "' appears twice");
  }
}

std::vector<std::string> PredicateLexicon::labels() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.label);
  return out;
}

std::optional<std::size_t> PredicateLexicon::index_of(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void to_json(nlohmann::json& j, const PredicateLexicon& lexicon) {
  j = nlohmann::json::array();
  for (const auto& e : lexicon.entries()) j.push_back({{"label", e.label}, {"count", e.count}});
}

namespace {

std::vector<LexiconEntry> entries_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("lexicon must be a JSON array of {label, count}", 0);
  std::vector<LexiconEntry> out;
  for (const auto& item : j) {
    try {
      out.push_back({item.at("label").get<std::string>(), item.value("count", std::uint64_t{0})});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("lexicon entry: ") + e.what(), 0);
    }
  }
  return out;
}

}  // namespace

PredicateLexicon lexicon_from_json(const nlohmann::json& j) { return PredicateLexicon(entries_from_json(j)); }

PredicateLexicon load_lexicon(const std::filesystem::path& path) {
  return lexicon_from_json(parse_json(read_file(path), path.string()));
}

std::vector<LexiconEntry> load_raw_lexicon(const std::filesystem::path& path) {
  return entries_from_json(parse_json(read_file(path), path.string()));
}

CleaningRules cleaning_rules_from_json(const nlohmann::json& j) {
  CleaningRules rules;
  rules.min_freq = j.value("min_freq", std::uint64_t{0});
  if (j.contains("merge")) rules.merge = j["merge"].get<std::map<std::string, std::string>>();
  if (j.contains("drop")) rules.drop = j["drop"].get<std::set<std::string>>();
  return rules;
}

std::string normalize_label(const std::string& raw) {
  std::string out;
  for (const auto& tok : split_tokens(raw)) {
    if (!out.empty()) out += ' ';
    for (char c : tok) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

PredicateLexicon clean_labels(std::span<const LexiconEntry> raw, const CleaningRules& rules) {
  std::map<std::string, std::string> merge;
  for (const auto& [from, to] : rules.merge) merge[normalize_label(from)] = normalize_label(to);
  std::set<std::string> drop;
  for (const auto& d : rules.drop) drop.insert(normalize_label(d));

  auto resolve = [&](std::string label) {
    std::set<std::string> seen{label};
    for (auto it = merge.find(label); it != merge.end(); it = merge.find(label)) {
      label = it->second;
      if (!seen.insert(label).second) throw ConfigError("merge table has a cycle through '" + label + "'");
    }
    return label;
  };

  std::vector<LexiconEntry> merged;
  std::unordered_map<std::string, std::size_t> where;
  for (const auto& entry : raw) {
    std::string label = normalize_label(entry.label);
    if (label.empty() || drop.count(label)) continue;
    label = resolve(std::move(label));
    if (label.empty() || drop.count(label)) continue;
    auto [it, inserted] = where.emplace(label, merged.size());
    if (inserted)
      merged.push_back({label, entry.count});
    else
      merged[it->second].count += entry.count;
  }
  std::erase_if(merged, [&](const LexiconEntry& e) { return e.count < rules.min_freq; });
  return PredicateLexicon(std::move(merged));
}

void WordVectorTable::insert(const std::string& token, std::vector<double> vector) {
  if (dim_ == 0) dim_ = vector.size();
  if (vector.size() != dim_ || dim_ == 0)
    throw ValidationError("word vector for '" + token + "' has length " + std::to_string(vector.size()) +
                          ", table dimension is " + std::to_string(dim_));
  vectors_[token] = std::move(vector);
}

const std::vector<double>* WordVectorTable::find(const std::string& token) const {
  auto it = vectors_.find(token);
  return it == vectors_.end() ? nullptr : &it->second;
}

WordVectorTable load_word_vectors(std::istream& in) {
  WordVectorTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_tokens(line);
    if (tokens.empty()) continue;
    if (line_no == 1 && tokens.size() == 2 &&
        std::all_of(line.begin(), line.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || std::isspace(static_cast<unsigned char>(c)); }))
      continue;
    if (tokens.size() < 2) throw ParseError("line " + std::to_string(line_no) + ": token without a vector", line_no);
    std::vector<double> v;
    v.reserve(tokens.size() - 1);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(tokens[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tokens[i].size())
        throw ParseError("line " + std::to_string(line_no) + ": bad number '" + tokens[i] + "'", line_no);
      v.push_back(x);
    }
    if (table.dim() != 0 && v.size() != table.dim())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(table.dim()) +
                           " components, got " + std::to_string(v.size()),
                       line_no);
    table.insert(tokens[0], std::move(v));
  }
  return table;
}

WordVectorTable load_word_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return load_word_vectors(in);
}

OovPolicy oov_policy_from_string(const std::string& name) {
  if (name == "skip") return OovPolicy::Skip;
  if (name == "zero") return OovPolicy::Zero;
  if (name == "error") return OovPolicy::Error;
  throw ParameterError("unknown OOV policy '" + name + "' (expected skip, zero or error)");
}

std::vector<double> embed_label(const std::string& label, const WordVectorTable& table, OovPolicy oov) {
  const auto tokens = split_tokens(label);
  if (tokens.empty()) throw EmbeddingError("cannot embed an empty label", {label});
  std::vector<double> acc(table.dim(), 0.0);
  std::size_t found = 0, counted = 0;
  for (const auto& tok : tokens) {
    const auto* v = table.find(tok);
    if (v == nullptr) {
      if (oov == OovPolicy::Error)
        throw EmbeddingError("label '" + label + "': token '" + tok + "' has no vector", {label});
      if (oov == OovPolicy::Zero) ++counted;
      continue;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*v)[i];
    ++found;
    ++counted;
  }
  if (found == 0) throw EmbeddingError("label '" + label + "': no token has a vector", {label});
  for (auto& x : acc) x /= static_cast<double>(counted);
  return acc;
}

HierarchyMap::HierarchyMap(std::vector<std::string> fine_labels, std::vector<std::string> coarse_names,
                           std::vector<std::size_t> fine_to_coarse)
    : fine_(std::move(fine_labels)), coarse_(std::move(coarse_names)), parent_(std::move(fine_to_coarse)) {
  if (parent_.size() != fine_.size())
    throw ValidationError("hierarchy maps " + std::to_string(parent_.size()) + " of " +
                          std::to_string(fine_.size()) + " fine labels");
  if (coarse_.size() > fine_.size()) throw ValidationError("hierarchy has more parents than fine labels");
  std::set<std::string> seen;
  for (const auto& f : fine_)
    if (f.empty() || !seen.insert(f).second) throw ValidationError("fine label '" + f + "' is empty or repeated");
  std::vector<std::size_t> children(coarse_.size(), 0);
  for (std::size_t i = 0; i < parent_.size(); ++i) {
    if (parent_[i] >= coarse_.size())
      throw ValidationError("fine label '" + fine_[i] + "' maps to missing parent " + std::to_string(parent_[i]));
    ++children[parent_[i]];
  }
  for (std::size_t c = 0; c < children.size(); ++c)
    if (children[c] == 0) throw ValidationError("parent '" + coarse_[c] + "' has no children");
}

HierarchyMap HierarchyMap::identity(std::vector<std::string> labels) {
  std::vector<std::size_t> parent(labels.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto coarse = labels;
  return HierarchyMap(std::move(labels), std::move(coarse), std::move(parent));
}

std::size_t HierarchyMap::coarse_of(std::size_t fine) const {
  if (fine >= parent_.size())
    throw LabelError("fine label index " + std::to_string(fine) + " is outside [0, " +
                         std::to_string(parent_.size()) + ")",
                     fine);
  return parent_[fine];
}

std::vector<std::size_t> HierarchyMap::children(std::size_t coarse) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < parent_.size(); ++i)
    if (parent_[i] == coarse) out.push_back(i);
  return out;
}

std::optional<std::size_t> HierarchyMap::fine_index(const std::string& label) const {
  auto it = std::find(fine_.begin(), fine_.end(), label);
  if (it == fine_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - fine_.begin());
}

void save_hierarchy(const HierarchyMap& map, std::ostream& out) {
  out << "{\n  \"coarse\": " << nlohmann::json(map.coarse_names()).dump() << ",\n  \"fine\": [\n";
  for (std::size_t i = 0; i < map.fine_count(); ++i) {
    nlohmann::json entry = nlohmann::json::object();
    entry["label"] = map.fine_labels()[i];
    entry["coarse_index"] = map.fine_to_coarse()[i];
    out << "    " << entry.dump() << (i + 1 < map.fine_count() ? ",\n" : "\n");
  }
  out << "  ]\n}\n";
}

void save_hierarchy(const HierarchyMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string(), 0);
  save_hierarchy(map, out);
}

HierarchyMap load_hierarchy(std::istream& in, const PredicateLexicon* expected) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto j = parse_json(text, "hierarchy");
  std::vector<std::string> coarse, fine;
  std::vector<std::size_t> parent;
  try {
    coarse = j.at("coarse").get<std::vector<std::string>>();
    for (const auto& entry : j.at("fine")) {
      fine.push_back(entry.at("label").get<std::string>());
      parent.push_back(entry.at("coarse_index").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("hierarchy: ") + e.what(), 0);
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < fine.size(); ++i)
    if (!seen.insert(fine[i]).second) {
      // Locate entry i: the (i+1)-th "label" key after the "fine" key.
      std::size_t pos = text.find("\"fine\"");
      for (std::size_t n = 0; n <= i && pos != std::string::npos; ++n) pos = text.find("\"label\"", pos + 1);
      const std::size_t line = pos == std::string::npos ? 0 : line_of_offset(text, pos);
      throw ParseError("hierarchy:" + std::to_string(line) + ": duplicate fine label '" + fine[i] + "'", line);
    }
  HierarchyMap map(std::move(fine), std::move(coarse), std::move(parent));
  if (expected) {
    for (const auto& e : expected->entries())
      if (!map.fine_index(e.label))
        throw ValidationError("hierarchy does not map lexicon label '" + e.label + "'");
    if (map.fine_count() != expected->size())
      throw ValidationError("hierarchy maps labels that are not in the lexicon");
  }
  return map;
}

HierarchyMap load_hierarchy(const std::filesystem::path& path, const PredicateLexicon* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return load_hierarchy(in, expected);
}

KeywordRuleConfig KeywordRuleConfig::defaults() {
  KeywordRuleConfig rules;
  rules.static_verbs = {"topped",  "covered", "attached", "mounted",   "painted", "printed", "filled",
                        "made",    "parked",  "stacked",  "surrounded", "lined",  "tied",    "decorated",
                        "wrapped", "framed",  "reflected"};
  rules.prepositions = {"about",  "above",  "across",     "after",  "against", "along",   "alongside", "among",
                        "around", "at",     "atop",       "behind", "below",   "beneath", "beside",    "between",
                        "beyond", "by",     "down",       "for",    "from",    "in",      "inside",    "into",
                        "near",   "next",   "of",         "off",    "on",      "onto",    "opposite",  "out",
                        "outside", "over",  "past",       "through", "to",     "toward",  "towards",   "under",
                        "underneath", "up", "upon",       "with",   "within",  "without"};
  rules.overrides = {{"inside of", "inside"}, {"out of", "out"},       {"in front of", "front"},
                     {"on top of", "top"},    {"in between", "between"}, {"next to", "next"}};
  return rules;
}

KeywordRuleConfig keyword_rules_from_json(const nlohmann::json& j) {
  KeywordRuleConfig rules = KeywordRuleConfig::defaults();
  if (j.contains("static_verbs")) rules.static_verbs = j["static_verbs"].get<std::set<std::string>>();
  if (j.contains("prepositions")) rules.prepositions = j["prepositions"].get<std::set<std::string>>();
  if (j.contains("overrides")) rules.overrides = j["overrides"].get<std::map<std::string, std::string>>();
  return rules;
}

std::string extract_keyword(const std::string& label, const KeywordRuleConfig& rules) {
  const std::string norm = normalize_label(label);
  if (norm.empty()) throw KeywordError("empty predicate label", label);
  if (auto it = rules.overrides.find(norm); it != rules.overrides.end()) return it->second;
  const auto tokens = split_tokens(norm);
  if (tokens.size() == 1) return tokens[0];
  const std::string* prep = nullptr;
  for (const auto& tok : tokens) {
    if (rules.static_verbs.count(tok)) return tok;
    if (prep == nullptr && rules.prepositions.count(tok)) prep = &tok;
  }
  if (prep) return *prep;
  throw KeywordError("no keyword rule applies to '" + label + "'", label);
}

HierarchyMap build_hierarchy_by_keyword(const PredicateLexicon& lexicon, const KeywordRuleConfig& rules) {
  std::vector<std::string> coarse;
  std::unordered_map<std::string, std::size_t> parent_of_keyword;
  std::vector<std::size_t> parent;
  for (const auto& e : lexicon.entries()) {
    std::string key;
    try {
      key = extract_keyword(e.label, rules);
    } catch (const KeywordError&) {
      key = split_tokens(e.label).back();
    }
    auto [it, inserted] = parent_of_keyword.emplace(key, coarse.size());
    if (inserted) coarse.push_back(key);
    parent.push_back(it->second);
  }
  return HierarchyMap(lexicon.labels(), std::move(coarse), std::move(parent));
}

HierarchyMap build_hierarchy_auto(const PredicateLexicon& lexicon, const WordVectorTable& table,
                                  const AutoClusterOptions& options) {
  if (lexicon.empty()) throw ParameterError("cannot cluster an empty lexicon");
  if (options.k < 1 || options.k > lexicon.size())
    throw ParameterError("k = " + std::to_string(options.k) + " outside [1, " + std::to_string(lexicon.size()) +
                         "] for a lexicon of " + std::to_string(lexicon.size()) + " labels");
  std::vector<std::vector<double>> points;
  std::vector<std::string> failed;
  for (const auto& e : lexicon.entries()) {
    try {
      points.push_back(embed_label(e.label, table, options.oov));
    } catch (const EmbeddingError&) {
      failed.push_back(e.label);
    }
  }
  if (!failed.empty()) {
    std::string msg = "cannot embed " + std::to_string(failed.size()) + " label(s):";
    for (const auto& f : failed) msg += " '" + f + "'";
    throw EmbeddingError(msg, std::move(failed));
  }

  const auto km = kmeans(points, {options.k, options.seed, options.max_iters});

  // Renumber clusters by first member so the output does not depend on seeding order.
  std::vector<std::size_t> renumber(options.k, options.k);
  std::size_t next = 0;
  for (auto a : km.assignment)
    if (renumber[a] == options.k) renumber[a] = next++;
  std::vector<std::size_t> parent(km.assignment.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = renumber[km.assignment[i]];

  std::vector<std::size_t> representative(next, lexicon.size());
  for (std::size_t i = 0; i < parent.size(); ++i) {
    auto& r = representative[parent[i]];
    if (r == lexicon.size() || lexicon.entries()[i].count > lexicon.entries()[r].count) r = i;
  }
  std::vector<std::string> coarse;
  for (auto r : representative) coarse.push_back(lexicon.entries()[r].label);
  return HierarchyMap(lexicon.labels(), std::move(coarse), std::move(parent));
}

}  // namespace hgsg
