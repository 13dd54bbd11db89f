#pragma once

// Molecule files (XYZ, minimal SDF V2000), property CSVs, dataset splitting
// and statistics, and the synthetic toy corpus.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gfmdiff/bonds.hpp"
#include "gfmdiff/chem.hpp"
#include "gfmdiff/elements.hpp"
#include "gfmdiff/random.hpp"
#include "gfmdiff/tensor.hpp"

namespace gfm {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Molecule {
  std::vector<std::string> symbols;
  std::vector<std::array<double, 3>> coords;
  std::string comment;
  // Bond block from the source file, when it has one.
  std::optional<std::vector<Bond>> bonds;
  std::vector<double> properties;

  std::size_t size() const { return symbols.size(); }

  MoleculeGraph graph() const {
    MoleculeGraph g;
    g.symbols = symbols;
    g.coords = coords;
    if (bonds) g.bonds = *bonds;
    return g;
  }
};

namespace detail {

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string_view> tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::optional<double> to_double(std::string_view s) {
  double v = 0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<long> to_long(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

[[noreturn]] inline void fail(const std::string& source, std::size_t line, const std::string& what) {
  throw DataError(source + ":" + std::to_string(line) + ": " + what);
}

inline std::string format_fixed(double v, int decimals, int width = 0) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%*.*f", width, decimals, v);
  return buf;
}

}  // namespace detail

// Concatenated XYZ blocks. Blank lines between blocks are tolerated.
inline std::vector<Molecule> parse_xyz(std::string_view text, const std::string& source = "<xyz>") {
  const auto lines = detail::split_lines(text);
  std::vector<Molecule> out;
  std::size_t k = 0;
  while (k < lines.size()) {
    if (detail::tokens(lines[k]).empty()) {
      ++k;
      continue;
    }
    const std::size_t count_line = k + 1;
    auto count = detail::to_long(lines[k]);
    if (!count || *count < 0) detail::fail(source, count_line, "malformed atom count '" + lines[k] + "'");
    const auto n = static_cast<std::size_t>(*count);
    const std::size_t first_atom = k + 2;
    if (first_atom + n > lines.size()) {
      const std::size_t have = lines.size() > first_atom ? lines.size() - first_atom : 0;
      detail::fail(source, count_line + 2,
                   "atom count " + std::to_string(n) + " but only " + std::to_string(have) + " atom lines");
    }
    Molecule m;
    m.comment = lines[k + 1];
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t ln = first_atom + a;
      const auto tok = detail::tokens(lines[ln]);
      if (tok.size() < 4) detail::fail(source, ln + 1, "expected 'symbol x y z'");
      const std::string sym(tok[0]);
      if (!find_element(sym)) detail::fail(source, ln + 1, "unknown element '" + sym + "'");
      std::array<double, 3> p{};
      for (int c = 0; c < 3; ++c) {
        auto v = detail::to_double(tok[1 + c]);
        if (!v) detail::fail(source, ln + 1, "non-numeric coordinate '" + std::string(tok[1 + c]) + "'");
        p[c] = *v;
      }
      m.symbols.push_back(sym);
      m.coords.push_back(p);
    }
    out.push_back(std::move(m));
    k = first_atom + n;
  }
  return out;
}

inline std::string write_xyz(const Molecule& m) {
  std::string s = std::to_string(m.size()) + "\n" + m.comment + "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    s += m.symbols[i];
    for (int c = 0; c < 3; ++c) s += " " + detail::format_fixed(m.coords[i][c], 6);
    s += "\n";
  }
  return s;
}

inline std::string write_xyz(const std::vector<Molecule>& ms) {
  std::string s;
  for (const auto& m : ms) s += write_xyz(m);
  return s;
}

// V2000 connection tables separated by "$$$$". Numeric "> <name>" data items
// become properties in order of appearance.
inline std::vector<Molecule> parse_sdf_minimal(std::string_view text, const std::string& source = "<sdf>") {
  const auto lines = detail::split_lines(text);
  std::vector<Molecule> out;
  std::size_t k = 0;
  while (k < lines.size()) {
    auto has_tag = [&](std::size_t ln) {
      return ln < lines.size() &&
             (lines[ln].find("V2000") != std::string::npos || lines[ln].find("V3000") != std::string::npos);
    };
    if (!has_tag(k + 3) && detail::tokens(lines[k]).empty()) {
      ++k;
      continue;
    }
    const std::size_t start = k;
    if (start + 3 >= lines.size()) detail::fail(source, lines.size(), "truncated record header");
    Molecule m;
    m.comment = lines[start];
    const std::string& counts = lines[start + 3];
    if (counts.find("V3000") != std::string::npos) detail::fail(source, start + 4, "unsupported version V3000");
    if (counts.find("V2000") == std::string::npos) detail::fail(source, start + 4, "missing V2000 version tag");
    auto na = detail::to_long(counts.substr(0, 3));
    auto nb = detail::to_long(counts.substr(3, 3));
    if (!na || !nb || *na < 0 || *nb < 0) detail::fail(source, start + 4, "malformed counts line");
    std::size_t ln = start + 4;
    for (long a = 0; a < *na; ++a, ++ln) {
      if (ln >= lines.size()) detail::fail(source, ln, "truncated atom block");
      const auto tok = detail::tokens(lines[ln]);
      if (tok.size() < 4) detail::fail(source, ln + 1, "malformed atom line");
      std::array<double, 3> p{};
      for (int c = 0; c < 3; ++c) {
        auto v = detail::to_double(tok[c]);
        if (!v) detail::fail(source, ln + 1, "non-numeric coordinate '" + std::string(tok[c]) + "'");
        p[c] = *v;
      }
      const std::string sym(tok[3]);
      if (!find_element(sym)) detail::fail(source, ln + 1, "unknown element '" + sym + "'");
      m.symbols.push_back(sym);
      m.coords.push_back(p);
    }
    std::vector<Bond> bonds;
    for (long b = 0; b < *nb; ++b, ++ln) {
      if (ln >= lines.size()) detail::fail(source, ln, "truncated bond block");
      const std::string& l = lines[ln];
      auto i = detail::to_long(l.substr(0, 3));
      auto j = detail::to_long(l.size() > 3 ? l.substr(3, 3) : "");
      auto o = detail::to_long(l.size() > 6 ? l.substr(6, 3) : "");
      if (!i || !j || !o) detail::fail(source, ln + 1, "malformed bond line");
      if (*i < 1 || *j < 1 || *i > *na || *j > *na || *i == *j) detail::fail(source, ln + 1, "bond atom index out of range");
      if (*o < 1 || *o > 3) detail::fail(source, ln + 1, "unsupported bond type " + std::to_string(*o));
      auto a0 = static_cast<std::size_t>(*i - 1), a1 = static_cast<std::size_t>(*j - 1);
      if (a0 > a1) std::swap(a0, a1);
      bonds.push_back({a0, a1, static_cast<int>(*o)});
    }
    m.bonds = std::move(bonds);
    bool ended = false;
    for (; ln < lines.size(); ++ln) {
      if (lines[ln].rfind("$$$$", 0) == 0) {
        ++ln;
        ended = true;
        break;
      }
      if (lines[ln].rfind("M  END", 0) == 0) ended = true;
      if (lines[ln].rfind(">", 0) == 0 && ln + 1 < lines.size()) {
        if (auto v = detail::to_double(detail::tokens(lines[ln + 1]).empty() ? "" : detail::tokens(lines[ln + 1])[0])) {
          m.properties.push_back(*v);
        }
      }
    }
    if (!ended) detail::fail(source, ln, "truncated record (no M  END or $$$$)");
    out.push_back(std::move(m));
    k = ln;
  }
  return out;
}

inline std::string write_sdf(const MoleculeGraph& g, const std::string& title = "") {
  std::string s = title + "\n  gfmdiff\n\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%3zu%3zu  0  0  0  0  0  0  0  0999 V2000\n", g.size(), g.bonds.size());
  s += buf;
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%10.4f%10.4f%10.4f %-3s 0  0  0  0  0  0  0  0  0  0  0  0\n", g.coords[i][0],
                  g.coords[i][1], g.coords[i][2], g.symbols[i].c_str());
    s += buf;
  }
  for (const auto& b : g.bonds) {
    std::snprintf(buf, sizeof buf, "%3zu%3zu%3d  0\n", b.i + 1, b.j + 1, b.order);
    s += buf;
  }
  return s + "M  END\n$$$$\n";
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::vector<Molecule> load_structures(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".xyz") return parse_xyz(read_file(path), path);
  if (ext == ".sdf" || ext == ".mol") return parse_sdf_minimal(read_file(path), path);
  throw DataError(path + ": unrecognized structure file extension '" + ext + "'");
}

// Structure files under a directory (sorted), or the single file itself.
inline std::vector<std::string> structure_files(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw DataError("no such file or directory: " + path);
  if (!fs::is_directory(path)) return {path};
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(path)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".xyz" || ext == ".sdf" || ext == ".mol")) files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// CSV with a header "index,<name>,..." mapping molecule index to values.
struct PropertyTable {
  std::vector<std::string> names;
  std::map<std::size_t, std::vector<double>> rows;
};

inline PropertyTable parse_property_csv(std::string_view text, const std::string& source = "<csv>") {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) detail::fail(source, 1, "empty property file");
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && cell.back() == ' ') cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(0, 1);
      f.push_back(cell);
    }
    return f;
  };
  PropertyTable t;
  auto header = split(lines[0]);
  if (header.size() < 2 || header[0] != "index") detail::fail(source, 1, "header must start with 'index'");
  t.names.assign(header.begin() + 1, header.end());
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (detail::tokens(lines[k]).empty()) continue;
    auto f = split(lines[k]);
    if (f.size() != header.size()) detail::fail(source, k + 1, "expected " + std::to_string(header.size()) + " fields");
    auto idx = detail::to_long(f[0]);
    if (!idx || *idx < 0) detail::fail(source, k + 1, "bad molecule index '" + f[0] + "'");
    std::vector<double> v;
    for (std::size_t c = 1; c < f.size(); ++c) {
      auto x = detail::to_double(f[c]);
      if (!x) detail::fail(source, k + 1, "non-numeric property '" + f[c] + "'");
      v.push_back(*x);
    }
    if (!t.rows.emplace(static_cast<std::size_t>(*idx), std::move(v)).second) {
      detail::fail(source, k + 1, "duplicate molecule index " + f[0]);
    }
  }
  return t;
}

using SizeHistogram = std::map<std::size_t, std::size_t>;

inline std::size_t sample_size(const SizeHistogram& hist, Rng& rng) {
  std::vector<double> w;
  std::vector<std::size_t> sizes;
  for (const auto& [n, c] : hist) {
    if (c == 0) continue;
    sizes.push_back(n);
    w.push_back(static_cast<double>(c));
  }
  if (sizes.empty()) throw ContractError("cannot sample a molecule size from an empty histogram");
  return sizes[rng.discrete(w)];
}

struct PropertyStats {
  double mean = 0;
  double std = 1;

  double standardize(double v) const { return (v - mean) / std; }
  double unstandardize(double z) const { return z * std + mean; }
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

inline Split split_indices(std::size_t n, double validation_fraction, std::uint64_t seed) {
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw std::invalid_argument("validation fraction must be in [0, 1)");
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const auto nv = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  Split s;
  s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nv));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(nv), idx.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

struct Dataset {
  std::vector<Molecule> molecules;
  std::vector<std::string> property_names;

  std::size_t size() const { return molecules.size(); }

  SizeHistogram size_histogram(const std::vector<std::size_t>& subset = {}) const {
    SizeHistogram h;
    if (subset.empty()) {
      for (const auto& m : molecules) ++h[m.size()];
    } else {
      for (auto i : subset) ++h[molecules.at(i).size()];
    }
    return h;
  }

  // Mean and population standard deviation of property k over the subset.
  PropertyStats property_stats(std::size_t k, const std::vector<std::size_t>& subset) const {
    if (subset.empty()) throw ContractError("property statistics need a nonempty subset");
    double s = 0, s2 = 0;
    for (auto i : subset) s += molecules.at(i).properties.at(k);
    const double mean = s / static_cast<double>(subset.size());
    for (auto i : subset) {
      const double d = molecules[i].properties[k] - mean;
      s2 += d * d;
    }
    const double sd = std::sqrt(s2 / static_cast<double>(subset.size()));
    return {mean, sd > 0.0 ? sd : 1.0};
  }

  void attach_properties(const PropertyTable& table) {
    for (std::size_t i = 0; i < molecules.size(); ++i) {
      auto it = table.rows.find(i);
      if (it == table.rows.end()) throw DataError("property table has no row for molecule " + std::to_string(i));
      molecules[i].properties = it->second;
    }
    property_names = table.names;
  }

  // Every symbol in the element set and every coordinate finite.
  void validate(const ElementSet& elements) const {
    for (std::size_t i = 0; i < molecules.size(); ++i) {
      const auto& m = molecules[i];
      if (m.size() == 0) throw DataError("molecule " + std::to_string(i) + " has no atoms");
      for (std::size_t a = 0; a < m.size(); ++a) {
        if (!elements.contains(m.symbols[a])) {
          throw DataError("molecule " + std::to_string(i) + ": element " + m.symbols[a] + " outside the element set");
        }
        for (double c : m.coords[a]) {
          if (!std::isfinite(c)) throw DataError("molecule " + std::to_string(i) + ": non-finite coordinate");
        }
      }
    }
  }
};

// Loads a file or directory of structures; an optional properties.csv in a
// directory is attached by molecule index.
inline Dataset load_dataset(const std::string& path) {
  Dataset d;
  for (const auto& f : structure_files(path)) {
    auto ms = load_structures(f);
    d.molecules.insert(d.molecules.end(), ms.begin(), ms.end());
  }
  const auto csv = std::filesystem::path(path) / "properties.csv";
  if (std::filesystem::is_directory(path) && std::filesystem::exists(csv)) {
    d.attach_properties(parse_property_csv(read_file(csv.string()), csv.string()));
  }
  return d;
}

// Valency per atom of the reference graph: the file's bond block when it has
// one, otherwise bonds perceived from the clean geometry.
inline std::vector<int> reference_valencies(const Molecule& m, const BondTable& table, BondOrderRule rule) {
  if (m.bonds) return m.graph().valencies();
  return infer_graph(m.coords, m.symbols, table, rule).valencies();
}

// ---------------------------------------------------------------------------
// Toy corpus

enum class ToyKind { kDiatomics, kChains, kTemplated };

inline ToyKind parse_toy_kind(const std::string& s) {
  if (s == "diatomics") return ToyKind::kDiatomics;
  if (s == "chains") return ToyKind::kChains;
  if (s == "templated-small-organics" || s == "templated") return ToyKind::kTemplated;
  throw std::invalid_argument("unknown toy dataset kind '" + s + "'");
}

inline std::string to_string(ToyKind k) {
  switch (k) {
    case ToyKind::kDiatomics: return "diatomics";
    case ToyKind::kChains: return "chains";
    case ToyKind::kTemplated: return "templated-small-organics";
  }
  return "";
}

struct ToyOptions {
  std::size_t min_chain_atoms = 3;
  std::size_t max_chain_atoms = 6;
  double length_jitter = 0.02;  // Angstrom
  double angle_jitter = 3.0;    // degrees
  BondOrderRule rule = BondOrderRule::kArgminMargin;
};

// Internal-coordinate row: atom bonded to `bond_ref` at `length`, with the
// angle to `angle_ref` and the dihedral to `dihedral_ref` (degrees).
struct ZAtom {
  std::string symbol;
  int bond_ref = -1;
  int angle_ref = -1;
  int dihedral_ref = -1;
  double length = 0;
  double angle = 0;
  double dihedral = 0;
  int order = 1;
};

struct ToyTemplate {
  std::string name;
  std::vector<ZAtom> atoms;
};

namespace detail {

using Vec3 = std::array<double, 3>;

inline Vec3 sub3(Vec3 a, Vec3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 cross3(Vec3 a, Vec3 b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline Vec3 unit3(Vec3 a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Natural extension reference frame placement.
inline std::vector<Vec3> build_cartesian(const std::vector<ZAtom>& z) {
  std::vector<Vec3> p;
  const double deg = std::numbers::pi / 180.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const auto& a = z[k];
    if (k == 0) {
      p.push_back({0, 0, 0});
    } else if (k == 1) {
      p.push_back({a.length, 0, 0});
    } else if (k == 2 || a.dihedral_ref < 0) {
      const Vec3 b = p[static_cast<std::size_t>(a.bond_ref)];
      const Vec3 c = p[static_cast<std::size_t>(a.angle_ref)];
      const Vec3 u = unit3(sub3(c, b));
      Vec3 helper = std::abs(u[2]) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
      const Vec3 n = unit3(cross3(u, helper));
      const Vec3 m = cross3(n, u);
      const double th = a.angle * deg;
      p.push_back({b[0] + a.length * (std::cos(th) * u[0] + std::sin(th) * m[0]),
                   b[1] + a.length * (std::cos(th) * u[1] + std::sin(th) * m[1]),
                   b[2] + a.length * (std::cos(th) * u[2] + std::sin(th) * m[2])});
    } else {
      const Vec3 pa = p[static_cast<std::size_t>(a.dihedral_ref)];
      const Vec3 pb = p[static_cast<std::size_t>(a.angle_ref)];
      const Vec3 pc = p[static_cast<std::size_t>(a.bond_ref)];
      const Vec3 bc = unit3(sub3(pc, pb));
      const Vec3 n = unit3(cross3(sub3(pb, pa), bc));
      const Vec3 m = cross3(n, bc);
      const double th = a.angle * deg, ph = a.dihedral * deg;
      const Vec3 d{-a.length * std::cos(th), a.length * std::sin(th) * std::cos(ph), a.length * std::sin(th) * std::sin(ph)};
      p.push_back({pc[0] + d[0] * bc[0] + d[1] * m[0] + d[2] * n[0], pc[1] + d[0] * bc[1] + d[1] * m[1] + d[2] * n[1],
                   pc[2] + d[0] * bc[2] + d[1] * m[2] + d[2] * n[2]});
    }
  }
  return p;
}

inline std::array<std::array<double, 3>, 3> random_rotation(Rng& rng) {
  // Uniform unit quaternion.
  double q[4];
  double n = 0;
  for (double& x : q) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : q) x /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

inline void center_and_rotate(std::vector<Vec3>& p, Rng& rng) {
  Vec3 com{0, 0, 0};
  for (const auto& v : p)
    for (int c = 0; c < 3; ++c) com[c] += v[c] / static_cast<double>(p.size());
  const auto r = random_rotation(rng);
  for (auto& v : p) {
    const Vec3 d = sub3(v, com);
    for (int c = 0; c < 3; ++c) v[c] = r[c][0] * d[0] + r[c][1] * d[1] + r[c][2] * d[2];
  }
}

// Z-matrix text: "symbol [bond_ref length [angle_ref angle [dihedral_ref dihedral]]] [=order]".
inline ToyTemplate parse_template(const std::string& name, const std::string& text) {
  ToyTemplate t{name, {}};
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    ZAtom a;
    if (!(ls >> a.symbol)) continue;
    std::vector<std::string> rest;
    for (std::string w; ls >> w;) rest.push_back(w);
    if (!rest.empty() && rest.back()[0] == '=') {
      a.order = std::stoi(rest.back().substr(1));
      rest.pop_back();
    }
    if (rest.size() >= 2) {
      a.bond_ref = std::stoi(rest[0]);
      a.length = std::stod(rest[1]);
    }
    if (rest.size() >= 4) {
      a.angle_ref = std::stoi(rest[2]);
      a.angle = std::stod(rest[3]);
    }
    if (rest.size() >= 6) {
      a.dihedral_ref = std::stoi(rest[4]);
      a.dihedral = std::stod(rest[5]);
    }
    t.atoms.push_back(a);
  }
  return t;
}

}  // namespace detail

inline const std::vector<ToyTemplate>& toy_templates() {
  static const std::vector<ToyTemplate> templates = [] {
    std::vector<std::pair<std::string, std::string>> src{
        {"methane", "C\nH 0 1.09\nH 0 1.09 1 109.47\nH 0 1.09 1 109.47 2 120\nH 0 1.09 1 109.47 2 -120\n"},
        {"water", "O\nH 0 0.96\nH 0 0.96 1 104.5\n"},
        {"ammonia", "N\nH 0 1.01\nH 0 1.01 1 107\nH 0 1.01 1 107 2 113\n"},
        {"hydrogen-fluoride", "F\nH 0 0.92\n"},
        {"fluoromethane", "C\nF 0 1.35\nH 0 1.09 1 109.47\nH 0 1.09 1 109.47 2 120\nH 0 1.09 1 109.47 2 -120\n"},
        {"methanol",
         "C\nO 0 1.43\nH 1 0.96 0 108.5\nH 0 1.09 1 109.47 2 180\nH 0 1.09 1 109.47 2 60\nH 0 1.09 1 109.47 2 -60\n"},
        {"methylamine",
         "C\nN 0 1.47\nH 1 1.01 0 109.5\nH 1 1.01 0 109.5 2 120\nH 0 1.09 1 109.47 2 180\nH 0 1.09 1 109.47 2 60\n"
         "H 0 1.09 1 109.47 2 -60\n"},
        {"ethane",
         "C\nC 0 1.54\nH 0 1.09 1 109.47\nH 0 1.09 1 109.47 2 120\nH 0 1.09 1 109.47 2 -120\nH 1 1.09 0 109.47 2 180\n"
         "H 1 1.09 0 109.47 2 60\nH 1 1.09 0 109.47 2 -60\n"},
        {"hydrogen-peroxide", "O\nO 0 1.48\nH 0 0.96 1 100\nH 1 0.96 0 100 2 115\n"},
        {"hydroxylamine", "N\nO 0 1.40\nH 1 0.96 0 104\nH 0 1.01 1 105 2 120\nH 0 1.01 1 105 2 -120\n"},
        {"hydrazine", "N\nN 0 1.45\nH 0 1.01 1 109\nH 0 1.01 1 109 2 120\nH 1 1.01 0 109 2 90\nH 1 1.01 0 109 2 -150\n"},
        {"dimethyl-ether",
         "O\nC 0 1.43\nC 0 1.43 1 111.7\nH 1 1.09 0 109.47 2 180\nH 1 1.09 0 109.47 2 60\nH 1 1.09 0 109.47 2 -60\n"
         "H 2 1.09 0 109.47 1 180\nH 2 1.09 0 109.47 1 60\nH 2 1.09 0 109.47 1 -60\n"},
        {"ethanol",
         "C\nC 0 1.54\nO 1 1.43 0 109.47\nH 2 0.96 1 108.5 0 180\nH 0 1.09 1 109.47 2 180\nH 0 1.09 1 109.47 2 60\n"
         "H 0 1.09 1 109.47 2 -60\nH 1 1.09 0 109.47 2 120\nH 1 1.09 0 109.47 2 -120\n"},
        {"ethylene",
         "C\nC 0 1.34 =2\nH 0 1.09 1 121.5\nH 0 1.09 1 121.5 2 180\nH 1 1.09 0 121.5 2 0\nH 1 1.09 0 121.5 2 180\n"},
        {"formaldehyde", "C\nO 0 1.20 =2\nH 0 1.09 1 121.8\nH 0 1.09 1 121.8 2 180\n"},
        {"hydrogen-cyanide", "C\nN 0 1.16 =3\nH 0 1.09 1 180\n"},
    };
    std::vector<ToyTemplate> out;
    for (const auto& [name, text] : src) out.push_back(detail::parse_template(name, text));
    return out;
  }();
  return templates;
}

namespace detail {

inline std::vector<Bond> template_bonds(const ToyTemplate& t) {
  std::vector<Bond> bonds;
  for (std::size_t k = 1; k < t.atoms.size(); ++k) {
    const auto r = static_cast<std::size_t>(t.atoms[k].bond_ref);
    bonds.push_back({std::min(r, k), std::max(r, k), t.atoms[k].order});
  }
  std::sort(bonds.begin(), bonds.end(), [](const Bond& a, const Bond& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
  return bonds;
}

inline Molecule realize(const ToyTemplate& t, Rng& rng, const ToyOptions& opt, bool jitter) {
  auto z = t.atoms;
  if (jitter) {
    for (auto& a : z) {
      a.length += opt.length_jitter * (2 * rng.uniform() - 1);
      a.angle += opt.angle_jitter * (2 * rng.uniform() - 1);
      a.dihedral += opt.angle_jitter * (2 * rng.uniform() - 1);
    }
  }
  auto p = build_cartesian(z);
  center_and_rotate(p, rng);
  Molecule m;
  for (const auto& a : z) m.symbols.push_back(a.symbol);
  m.coords = p;
  m.bonds = template_bonds(t);
  m.comment = t.name;
  return m;
}

// Bonds perceived from geometry coincide with the constructed ones and every
// atom carries an allowed valency.
inline bool toy_consistent(const Molecule& m, const BondTable& table, BondOrderRule rule) {
  auto g = infer_graph(m.coords, m.symbols, table, rule);
  auto sorted = [](std::vector<Bond> b) {
    std::sort(b.begin(), b.end(), [](const Bond& x, const Bond& y) { return std::tie(x.i, x.j) < std::tie(y.i, y.j); });
    return b;
  };
  if (sorted(g.bonds) != sorted(*m.bonds)) return false;
  return molecule_is_stable(g, ValenceTable{});
}

inline ToyTemplate chain_template(std::size_t atoms, Rng& rng) {
  // Terminal H/F on a backbone of oxygens.
  ToyTemplate t{"chain-" + std::to_string(atoms), {}};
  std::vector<std::string> sym(atoms, "O");
  sym.front() = rng.bernoulli(0.5) ? "H" : "F";
  sym.back() = rng.bernoulli(0.5) ? "H" : "F";
  auto length = [](const std::string& a, const std::string& b) {
    auto key = a < b ? a + b : b + a;
    if (key == "HO") return 0.96;
    if (key == "FO") return 1.42;
    if (key == "OO") return 1.48;
    if (key == "HH") return 0.74;
    if (key == "FH") return 0.92;
    return 1.42;  // FF
  };
  for (std::size_t k = 0; k < atoms; ++k) {
    ZAtom a;
    a.symbol = sym[k];
    if (k >= 1) {
      a.bond_ref = static_cast<int>(k - 1);
      a.length = length(sym[k - 1], sym[k]);
    }
    if (k >= 2) {
      a.angle_ref = static_cast<int>(k - 2);
      a.angle = 104.0 + 8.0 * rng.uniform();
    }
    if (k >= 3) {
      a.dihedral_ref = static_cast<int>(k - 3);
      a.dihedral = 60.0 + 240.0 * rng.uniform();
    }
    t.atoms.push_back(a);
  }
  return t;
}

}  // namespace detail

// Synthetic corpus of single-connected-component molecules whose perceived
// bonds match their construction exactly under the given bond table.
inline Dataset toy_dataset(ToyKind kind, std::size_t n, Rng& rng, const BondTable& table, const ToyOptions& opt = {}) {
  Dataset d;
  std::vector<const ToyTemplate*> pool;
  std::vector<ToyTemplate> diatomics;
  if (kind == ToyKind::kDiatomics) {
    for (auto [a, b, len] : {std::tuple{"H", "H", 0.74}, {"H", "F", 0.92}, {"F", "F", 1.42}}) {
      diatomics.push_back(detail::parse_template(std::string(a) + b, std::string(a) + "\n" + b + " 0 " + std::to_string(len) + "\n"));
    }
  }
  const auto& candidates = kind == ToyKind::kDiatomics ? diatomics : toy_templates();
  if (kind != ToyKind::kChains) {
    for (const auto& t : candidates) {
      bool in_set = true;
      for (const auto& a : t.atoms) in_set = in_set && table.elements().contains(a.symbol);
      if (!in_set) continue;
      Rng probe(0);
      if (detail::toy_consistent(detail::realize(t, probe, opt, false), table, opt.rule)) pool.push_back(&t);
    }
    if (pool.empty()) throw DataError("no toy template is consistent with the bond table and order rule");
  }
  while (d.molecules.size() < n) {
    Molecule m;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      if (kind == ToyKind::kChains) {
        const auto atoms = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(opt.min_chain_atoms),
                                                                   static_cast<std::int64_t>(opt.max_chain_atoms)));
        m = detail::realize(detail::chain_template(atoms, rng), rng, opt, true);
      } else {
        m = detail::realize(*pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))],
                            rng, opt, kind != ToyKind::kDiatomics);
      }
      ok = detail::toy_consistent(m, table, opt.rule);
    }
    if (!ok) throw DataError("toy generator could not produce a consistent " + to_string(kind) + " molecule");
    d.molecules.push_back(std::move(m));
  }
  // Radius of gyration as a geometry-derived label for conditioning runs.
  d.property_names = {"gyration_radius"};
  for (auto& m : d.molecules) {
    double s = 0;
    for (const auto& p : m.coords) s += p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    m.properties = {std::sqrt(s / static_cast<double>(m.size()))};
  }
  return d;
}

}  // namespace gfm
