// SPDX-License-Identifier: Apache-2.0
#pragma once

// Predicate label hierarchy: cleaning raw predicate lexicons, keyword rules
// for manual clustering, and automatic clustering of label embeddings into
// coarse parent classes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hgsg/error.hpp"

namespace hgsg {

struct LexiconEntry {
  std::string label;
  std::uint64_t count = 0;

  bool operator==(const LexiconEntry&) const = default;
};

/// Ordered set of unique, non-empty predicate labels with their frequencies.
class PredicateLexicon {
 public:
  PredicateLexicon() = default;
  explicit PredicateLexicon(std::vector<LexiconEntry> entries);

  const std::vector<LexiconEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::vector<std::string> labels() const;
  std::optional<std::size_t> index_of(const std::string& label) const;

  bool operator==(const PredicateLexicon& other) const { return entries_ == other.entries_; }

 private:
  std::vector<LexiconEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

void to_json(nlohmann::json& j, const PredicateLexicon& lexicon);
/// Accepts a JSON array of {label, count}. Duplicate or empty labels throw.
PredicateLexicon lexicon_from_json(const nlohmann::json& j);
PredicateLexicon load_lexicon(const std::filesystem::path& path);
/// Entries as stored, without normalization or uniqueness checks.
std::vector<LexiconEntry> load_raw_lexicon(const std::filesystem::path& path);

struct CleaningRules {
  /// Labels counted below this are removed after merging.
  std::uint64_t min_freq = 0;
  /// label -> replacement; chains are followed to their end.
  std::map<std::string, std::string> merge;
  std::set<std::string> drop;
};

CleaningRules cleaning_rules_from_json(const nlohmann::json& j);

/// Lowercase, trim, and collapse internal whitespace.
std::string normalize_label(const std::string& raw);

/// Normalizes labels, drops listed labels, applies merges (summing counts),
/// then removes labels with count < min_freq. Output keeps first-appearance
/// order of each surviving label. A merge cycle throws ConfigError.
PredicateLexicon clean_labels(std::span<const LexiconEntry> raw, const CleaningRules& rules);

/// token -> dense vector, all of one dimension.
class WordVectorTable {
 public:
  explicit WordVectorTable(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  void insert(const std::string& token, std::vector<double> vector);
  const std::vector<double>* find(const std::string& token) const;

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

/// Text format, one `token v1 ... v_dim` per line. A leading `count dim`
/// header line (word2vec text format) is skipped.
WordVectorTable load_word_vectors(std::istream& in);
WordVectorTable load_word_vectors(const std::filesystem::path& path);

enum class OovPolicy { Skip, Zero, Error };
OovPolicy oov_policy_from_string(const std::string& name);

/// Mean of the label's whitespace-separated token vectors.
std::vector<double> embed_label(const std::string& label, const WordVectorTable& table,
                                OovPolicy oov = OovPolicy::Skip);

/// Total map from fine labels onto coarse parent classes.
class HierarchyMap {
 public:
  HierarchyMap() = default;
  HierarchyMap(std::vector<std::string> fine_labels, std::vector<std::string> coarse_names,
               std::vector<std::size_t> fine_to_coarse);

  static HierarchyMap identity(std::vector<std::string> labels);

  const std::vector<std::string>& fine_labels() const noexcept { return fine_; }
  const std::vector<std::string>& coarse_names() const noexcept { return coarse_; }
  const std::vector<std::size_t>& fine_to_coarse() const noexcept { return parent_; }
  std::size_t fine_count() const noexcept { return fine_.size(); }
  std::size_t coarse_count() const noexcept { return coarse_.size(); }

  /// Throws LabelError when fine is out of range.
  std::size_t coarse_of(std::size_t fine) const;
  std::vector<std::size_t> children(std::size_t coarse) const;
  std::optional<std::size_t> fine_index(const std::string& label) const;

  bool operator==(const HierarchyMap&) const = default;

 private:
  std::vector<std::string> fine_;
  std::vector<std::string> coarse_;
  std::vector<std::size_t> parent_;
};

/// JSON `{coarse: [...], fine: [{label, coarse_index}, ...]}`, one fine entry
/// per line.
void save_hierarchy(const HierarchyMap& map, std::ostream& out);
void save_hierarchy(const HierarchyMap& map, const std::filesystem::path& path);

/// Throws ParseError (with line) on malformed JSON or duplicate fine labels,
/// ValidationError on an invalid mapping or, when `expected` is given, a fine
/// label set that differs from it.
HierarchyMap load_hierarchy(std::istream& in, const PredicateLexicon* expected = nullptr);
HierarchyMap load_hierarchy(const std::filesystem::path& path, const PredicateLexicon* expected = nullptr);

struct KeywordRuleConfig {
  /// Verbs whose verb-prep phrases describe a static status ("topped with").
  std::set<std::string> static_verbs;
  std::set<std::string> prepositions;
  /// Whole-phrase overrides for stereotyped expressions; checked first.
  std::map<std::string, std::string> overrides;

  static KeywordRuleConfig defaults();
};

KeywordRuleConfig keyword_rules_from_json(const nlohmann::json& j);

class KeywordError : public Error {
 public:
  KeywordError(const std::string& what, std::string label) : Error(what), label_(std::move(label)) {}
  const std::string& label() const noexcept { return label_; }

 private:
  std::string label_;
};

/// The word of a predicate phrase that carries the subject-object relation.
/// Throws KeywordError when no rule applies.
std::string extract_keyword(const std::string& label, const KeywordRuleConfig& rules);

/// Groups labels sharing a keyword under one parent named after it. Labels
/// without a resolvable keyword fall back to their last token.
HierarchyMap build_hierarchy_by_keyword(const PredicateLexicon& lexicon, const KeywordRuleConfig& rules);

struct AutoClusterOptions {
  std::size_t k = 8;
  std::uint64_t seed = 0;
  OovPolicy oov = OovPolicy::Skip;
  std::size_t max_iters = 300;
};

/// Embeds every label, clusters with k-means and names each parent after its
/// most frequent member. Parents are numbered by their first member's index.
/// Throws EmbeddingError listing every label that could not be embedded.
HierarchyMap build_hierarchy_auto(const PredicateLexicon& lexicon, const WordVectorTable& table,
                                  const AutoClusterOptions& options);

}  // namespace hgsg
