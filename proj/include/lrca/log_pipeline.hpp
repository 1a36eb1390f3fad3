/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "lrca/common.hpp"
#include "lrca/obs_model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lrca {

inline constexpr std::string_view kWildcard = "<*>";

struct LogTemplate {
  int template_id = 0;
  std::vector<std::string> tokens;

  bool operator==(const LogTemplate&) const = default;
};

namespace detail {

inline std::vector<std::string> split_whitespace(std::string_view message) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < message.size()) {
    while (i < message.size() && std::isspace(static_cast<unsigned char>(message[i]))) ++i;
    std::size_t j = i;
    while (j < message.size() && !std::isspace(static_cast<unsigned char>(message[j]))) ++j;
    if (j > i) out.emplace_back(message.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Optional sign, digits, optional fraction. Such tokens are masked before mining.
inline bool is_numeric_token(std::string_view t) {
  if (!t.empty() && (t.front() == '-' || t.front() == '+')) t.remove_prefix(1);
  if (t.empty()) return false;
  bool digits = false, dot = false;
  for (char c : t) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digits = true;
    } else if (c == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  return digits;
}

inline bool has_digit(std::string_view t) {
  return std::any_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; });
}

}  // namespace detail

/// Fixed-depth parse-tree template miner in the style of Drain.
///
/// The tree has `depth` levels counting the root and the leaf: root, token
/// count, then `depth - 3` levels keyed by leading tokens, then a leaf holding
/// candidate templates. With the default depth of 4 the only token level is the
/// first token. Tokens containing digits are routed through the wildcard child
/// so variable leading tokens do not fragment the tree.
class TemplateMiner {
 public:
  struct Options {
    int depth = 4;
    double similarity_threshold = 0.5;
    std::size_t max_children = 100;
  };

  TemplateMiner() = default;
  explicit TemplateMiner(Options options) : options_(options) {
    if (options_.depth < 3) throw UsageError("template tree depth must be >= 3");
  }

  /// Mines one message and returns the id of the template it landed in.
  int add(std::string_view message) {
    auto tokens = detail::split_whitespace(message);
    if (tokens.empty()) throw DataError("cannot mine an empty log message");
    for (auto& t : tokens)
      if (detail::is_numeric_token(t)) t = kWildcard;

    auto& leaf = leaf_for(tokens);
    int best = -1;
    double best_sim = -1.0;
    std::size_t best_params = 0;
    for (int id : leaf) {
      const auto& tmpl = templates_[static_cast<std::size_t>(id)].tokens;
      std::size_t same = 0, params = 0;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tmpl[i] == kWildcard) {
          ++params;
        } else if (tmpl[i] == tokens[i]) {
          ++same;
        }
      }
      const double sim = static_cast<double>(same) / static_cast<double>(tokens.size());
      if (sim > best_sim || (sim == best_sim && params > best_params)) {
        best = id;
        best_sim = sim;
        best_params = params;
      }
    }
    if (best >= 0 && best_sim >= options_.similarity_threshold) {
      auto& tmpl = templates_[static_cast<std::size_t>(best)].tokens;
      for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tmpl[i] != tokens[i]) tmpl[i] = kWildcard;
      return best;
    }
    const int id = static_cast<int>(templates_.size());
    templates_.push_back({id, std::move(tokens)});
    leaf.push_back(id);
    return id;
  }

  const LogTemplate& at(int id) const { return templates_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return templates_.size(); }
  const std::vector<LogTemplate>& templates() const { return templates_; }
  const Options& options() const { return options_; }

  /// Rebuilds a miner from a persisted template list (ids must be 0..n-1).
  static TemplateMiner restore(Options options, std::vector<LogTemplate> templates) {
    TemplateMiner m(options);
    for (std::size_t i = 0; i < templates.size(); ++i) {
      if (templates[i].template_id != static_cast<int>(i) || templates[i].tokens.empty())
        throw DataError("template store is corrupt at id " + std::to_string(i));
      m.leaf_for(templates[i].tokens).push_back(templates[i].template_id);
    }
    m.templates_ = std::move(templates);
    return m;
  }

  /// `template_id<TAB>tokens joined by space`, one template per line.
  void write_tsv(std::ostream& out) const {
    for (const auto& t : templates_) {
      out << t.template_id << '\t';
      for (std::size_t i = 0; i < t.tokens.size(); ++i) out << (i ? " " : "") << t.tokens[i];
      out << '\n';
    }
  }

 private:
  struct Node {
    std::map<std::string, Node> children;
    std::vector<int> leaf;
  };

  std::vector<int>& leaf_for(const std::vector<std::string>& tokens) {
    Node* node = &by_length_[tokens.size()];
    const auto token_levels = static_cast<std::size_t>(options_.depth - 3);
    for (std::size_t level = 0; level < token_levels && level < tokens.size(); ++level) {
      std::string key = detail::has_digit(tokens[level]) ? std::string(kWildcard) : tokens[level];
      auto it = node->children.find(key);
      if (it == node->children.end()) {
        if (node->children.size() + 1 >= options_.max_children) key = kWildcard;
        it = node->children.try_emplace(key).first;
      }
      node = &it->second;
    }
    return node->leaf;
  }

  Options options_{};
  std::map<std::size_t, Node> by_length_;
  std::vector<LogTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Token normalization
// ---------------------------------------------------------------------------

inline const std::set<std::string, std::less<>>& stop_words() {
  static const std::set<std::string, std::less<>> words = {
      "a",       "about",  "above",  "after",   "again",   "against", "all",     "am",     "an",      "and",
      "any",     "are",    "as",     "at",      "be",      "because", "been",    "before", "being",   "below",
      "between", "both",   "but",    "by",      "can",     "could",   "did",     "do",     "does",    "doing",
      "down",    "during", "each",   "few",     "for",     "from",    "further", "had",    "has",     "have",
      "having",  "he",     "her",    "here",    "hers",    "him",     "his",     "how",    "i",       "if",
      "in",      "into",   "is",     "it",      "its",     "itself",  "just",    "me",     "more",    "most",
      "my",      "no",     "nor",    "not",     "now",     "of",      "off",     "on",     "once",    "only",
      "or",      "other",  "our",    "ours",    "out",     "over",    "own",     "same",   "she",     "should",
      "so",      "some",   "such",   "than",    "that",    "the",     "their",   "them",   "then",    "there",
      "these",   "they",   "this",   "those",   "through", "to",      "too",     "under",  "until",   "up",
      "very",    "was",    "we",     "were",    "what",    "when",    "where",   "which",  "while",   "who",
      "whom",    "why",    "will",   "with",    "would",   "you",     "your",    "yours",  "yourself"};
  return words;
}

/// Lowercases, drops wildcards, keeps only alphabetic runs of each token, and
/// removes stop words. May return an empty list.
inline std::vector<std::string> normalize_tokens(std::span<const std::string> template_tokens) {
  std::vector<std::string> out;
  const auto& stops = stop_words();
  for (const auto& token : template_tokens) {
    if (token == kWildcard) continue;
    std::string word;
    auto flush = [&] {
      if (!word.empty() && !stops.contains(word)) out.push_back(word);
      word.clear();
    };
    for (char c : token) {
      const auto u = static_cast<unsigned char>(c);
      if (std::isalpha(u)) {
        word.push_back(static_cast<char>(std::tolower(u)));
      } else {
        flush();
      }
    }
    flush();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sentence embedding and sequence pooling
// ---------------------------------------------------------------------------

/// Signed feature hashing: token hash h selects bucket h mod d and sign from
/// bit 32. The count vector is L2-normalized unless it is all zero.
inline Vector embed_sentence(std::span<const std::string> tokens, int d_log) {
  if (d_log < 8) throw UsageError("d_log must be >= 8");
  Vector v = Vector::Zero(d_log);
  for (const auto& t : tokens) {
    const std::uint64_t h = fnv1a64(t);
    const auto index = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(d_log));
    v[index] += ((h >> 32) & 1U) ? -1.0 : 1.0;
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

/// Deduplicates `records` by template, embeds each template's normalized
/// tokens and sum-pools. `records` must all belong to one node and one stream;
/// the miner is updated with any unseen messages.
inline Vector embed_log_sequence(std::span<const LogRecord* const> records, int d_log, TemplateMiner& miner) {
  std::vector<int> ids;
  ids.reserve(records.size());
  for (const auto* r : records) ids.push_back(miner.add(r->message));
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Vector pooled = Vector::Zero(d_log);
  for (int id : ids) pooled += embed_sentence(normalize_tokens(miner.at(id).tokens), d_log);
  return pooled;
}

inline Vector embed_log_sequence(std::span<const LogRecord> records, int d_log, TemplateMiner& miner) {
  std::vector<const LogRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return embed_log_sequence(std::span<const LogRecord* const>(ptrs), d_log, miner);
}

}  // namespace lrca
