#pragma once

// Typical bond lengths per element pair and bond order, plus per-order
// margins. A pair is bonded at order o when its distance is below
// length(o) + margin(o).

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfmdiff/elements.hpp"

namespace gfm {

// Standard covalent bond lengths in Angstrom: "symbol symbol order length".
inline constexpr const char* kDefaultBondLengths = R"(# symbol symbol order length_angstrom
H H 1 0.74
H B 1 1.19
H C 1 1.09
H N 1 1.01
H O 1 0.96
H F 1 0.92
H Si 1 1.48
H P 1 1.44
H S 1 1.34
H Cl 1 1.27
H Br 1 1.41
H I 1 1.61
B C 1 1.56
C C 1 1.54
C N 1 1.47
C O 1 1.43
C F 1 1.35
C Si 1 1.85
C P 1 1.84
C S 1 1.82
C Cl 1 1.77
C Br 1 1.94
C I 1 2.14
N N 1 1.45
N O 1 1.40
N F 1 1.36
N P 1 1.77
N S 1 1.68
N Cl 1 1.75
N Br 1 2.14
O O 1 1.48
O F 1 1.42
O Si 1 1.63
O P 1 1.63
O S 1 1.51
O Cl 1 1.64
F F 1 1.42
F Si 1 1.60
F P 1 1.54
F S 1 1.58
Si Si 1 2.33
P P 1 2.21
P S 1 2.10
S S 1 2.04
Cl Cl 1 1.99
Br Br 1 2.28
I I 1 2.66
C C 2 1.34
C N 2 1.29
C O 2 1.20
C S 2 1.60
N N 2 1.25
N O 2 1.21
O O 2 1.21
O S 2 1.43
O P 2 1.50
C C 3 1.20
C N 3 1.16
C O 3 1.13
N N 3 1.10
)";

inline constexpr std::array<double, 3> kDefaultMargins{0.10, 0.05, 0.03};

// How the order is chosen among the orders whose margin is negative.
enum class BondOrderRule {
  kArgminMargin,       // index of the smallest margin, ties to the lowest order
  kShortestSatisfied,  // highest order whose threshold is met
};

inline BondOrderRule parse_bond_order_rule(const std::string& s) {
  if (s == "argmin") return BondOrderRule::kArgminMargin;
  if (s == "shortest") return BondOrderRule::kShortestSatisfied;
  throw std::invalid_argument("unknown bond order rule '" + s + "' (expected argmin or shortest)");
}

inline std::string to_string(BondOrderRule r) {
  return r == BondOrderRule::kArgminMargin ? "argmin" : "shortest";
}

// Bond order (0 = none) from the three margins d - (D + M).
inline int decide_order(const std::array<double, 3>& margin, BondOrderRule rule) {
  if (rule == BondOrderRule::kShortestSatisfied) {
    for (int o = 2; o >= 0; --o) {
      if (margin[o] < 0.0) return o + 1;
    }
    return 0;
  }
  int best = -1;
  for (int o = 0; o < 3; ++o) {
    if (margin[o] < 0.0 && (best < 0 || margin[o] < margin[best])) best = o;
  }
  return best + 1;
}

class BondTable {
 public:
  static constexpr double kAbsent = std::numeric_limits<double>::infinity();

  BondTable() = default;

  // Parses the text table, keeping only pairs within the element set.
  static BondTable parse(const std::string& text, const ElementSet& elements,
                         std::array<double, 3> margins = kDefaultMargins) {
    BondTable t;
    t.elements_ = elements;
    t.margins_ = margins;
    const std::size_t nf = elements.size();
    t.lengths_.assign(nf * nf * 3, kAbsent);
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::string a, b;
      int order = 0;
      double length = 0;
      if (!(ls >> a)) continue;
      if (!(ls >> b >> order >> length)) {
        throw std::invalid_argument("bond table line " + std::to_string(lineno) + ": expected 'A B order length'");
      }
      if (order < 1 || order > 3 || !(length > 0.0)) {
        throw std::invalid_argument("bond table line " + std::to_string(lineno) + ": bad order or length");
      }
      if (!find_element(a)) throw UnknownElementError(a);
      if (!find_element(b)) throw UnknownElementError(b);
      if (!elements.contains(a) || !elements.contains(b)) continue;
      const auto ia = elements.index(a), ib = elements.index(b);
      t.lengths_[(ia * nf + ib) * 3 + (order - 1)] = length;
      t.lengths_[(ib * nf + ia) * 3 + (order - 1)] = length;
    }
    t.validate();
    return t;
  }

  static BondTable load(const std::string& path, const ElementSet& elements,
                        std::array<double, 3> margins = kDefaultMargins) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open bond table " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), elements, margins);
  }

  static BondTable standard(const ElementSet& elements, std::array<double, 3> margins = kDefaultMargins) {
    return parse(kDefaultBondLengths, elements, margins);
  }

  void validate() const {
    for (double m : margins_) {
      if (!(m > 0.0)) throw std::invalid_argument("bond margins must be positive");
    }
    const std::size_t nf = elements_.size();
    for (std::size_t a = 0; a < nf; ++a)
      for (std::size_t b = 0; b < nf; ++b) {
        for (int o = 0; o < 3; ++o) {
          if (length(a, b, o) != length(b, a, o)) throw std::invalid_argument("bond table is not symmetric");
        }
        for (int o = 1; o < 3; ++o) {
          if (length(a, b, o) != kAbsent && length(a, b, o - 1) != kAbsent && length(a, b, o) > length(a, b, o - 1)) {
            throw std::invalid_argument("bond lengths must shrink with order for " + elements_.symbol(a) + "-" +
                                        elements_.symbol(b));
          }
        }
      }
  }

  const ElementSet& elements() const { return elements_; }
  std::size_t types() const { return elements_.size(); }
  // order_index is 0-based (0 = single).
  double length(std::size_t a, std::size_t b, int order_index) const {
    return lengths_[(a * elements_.size() + b) * 3 + static_cast<std::size_t>(order_index)];
  }
  const std::array<double, 3>& margins() const { return margins_; }

  std::array<double, 3> margins_at(double distance, std::size_t a, std::size_t b) const {
    std::array<double, 3> m{};
    for (int o = 0; o < 3; ++o) {
      const double len = length(a, b, o);
      m[o] = len == kAbsent ? kAbsent : distance - (len + margins_[o]);
    }
    return m;
  }

 private:
  ElementSet elements_;
  std::array<double, 3> margins_ = kDefaultMargins;
  std::vector<double> lengths_;
};

}  // namespace gfm
