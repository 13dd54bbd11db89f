#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfm {

struct ElementInfo {
  std::string symbol;
  int atomic_number;
  std::set<int> valences;  // allowed neutral valencies
};

inline const std::vector<ElementInfo>& element_catalog() {
  static const std::vector<ElementInfo> catalog{
      {"H", 1, {1}},  {"B", 5, {3}},  {"C", 6, {4}},      {"N", 7, {3}},     {"O", 8, {2}},
      {"F", 9, {1}},  {"Si", 14, {4}}, {"P", 15, {3, 5}}, {"S", 16, {2, 4, 6}}, {"Cl", 17, {1}},
      {"Br", 35, {1}}, {"I", 53, {1}},
  };
  return catalog;
}

inline std::optional<ElementInfo> find_element(const std::string& symbol) {
  for (const auto& e : element_catalog()) {
    if (e.symbol == symbol) return e;
  }
  return std::nullopt;
}

class UnknownElementError : public std::invalid_argument {
 public:
  explicit UnknownElementError(const std::string& symbol)
      : std::invalid_argument("unknown element symbol '" + symbol + "'"), symbol_(symbol) {}
  const std::string& symbol() const { return symbol_; }

 private:
  std::string symbol_;
};

// Ordered set of element symbols defining the atom-type axis (nf) of a model.
class ElementSet {
 public:
  ElementSet() = default;
  explicit ElementSet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    if (symbols_.empty()) throw std::invalid_argument("element set must not be empty");
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      const auto info = find_element(symbols_[i]);
      if (!info) throw UnknownElementError(symbols_[i]);
      if (index_.count(symbols_[i])) throw std::invalid_argument("duplicate element " + symbols_[i]);
      index_[symbols_[i]] = i;
      numbers_.push_back(info->atomic_number);
    }
  }

  static ElementSet qm9() { return ElementSet({"H", "C", "N", "O", "F"}); }

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(std::size_t i) const { return symbols_.at(i); }
  int atomic_number(std::size_t i) const { return numbers_.at(i); }
  int max_atomic_number() const { return *std::max_element(numbers_.begin(), numbers_.end()); }
  bool contains(const std::string& s) const { return index_.count(s) > 0; }

  std::size_t index(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) throw UnknownElementError(s);
    return it->second;
  }

 private:
  std::vector<std::string> symbols_;
  std::vector<int> numbers_;
  std::map<std::string, std::size_t> index_;
};

// Allowed valency sets keyed by symbol.
class ValenceTable {
 public:
  ValenceTable() {
    for (const auto& e : element_catalog()) allowed_[e.symbol] = e.valences;
  }

  bool supports(const std::string& s) const { return allowed_.count(s) > 0; }
  bool allowed(const std::string& s, int valency) const {
    auto it = allowed_.find(s);
    return it != allowed_.end() && it->second.count(valency) > 0;
  }
  void set(const std::string& s, std::set<int> v) {
    if (v.empty()) throw std::invalid_argument("valence set for " + s + " must be nonempty");
    allowed_[s] = std::move(v);
  }
  const std::set<int>& valences(const std::string& s) const {
    auto it = allowed_.find(s);
    if (it == allowed_.end()) throw UnknownElementError(s);
    return it->second;
  }

 private:
  std::map<std::string, std::set<int>> allowed_;
};

}  // namespace gfm
