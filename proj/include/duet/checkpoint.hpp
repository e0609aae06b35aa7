#pragma once

// Text checkpoint format (version 1):
//
//   duet-mlp 1
//   seed <u64>
//   head logits
//   layers <n>
//   layer <in> <out> <activation> [bn]
//   weight <in*out values, row-major>
//   bias <out values>
//   ...
//   end
//
// A bounded head is written as "head bounded" followed by "lo ..." and "hi ..."
// lines. A trailing "bn" on a layer line marks batch standardization. Values use 17 significant digits, so save/load is value-exact.

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "duet/nets.hpp"

namespace duet {

inline constexpr int kCheckpointVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_values(std::ostream& os, const char* tag, const Tensor& t) {
  os << tag;
  for (double v : t.values()) os << ' ' << fmt17(v);
  os << '\n';
}

inline std::vector<double> read_values(std::istream& is, const std::string& tag, std::size_t n) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("checkpoint: missing '" + tag + "' line");
  std::istringstream ls(line);
  std::string got;
  ls >> got;
  if (got != tag) throw FormatError("checkpoint: expected '" + tag + "', found '" + got + "'");
  std::vector<double> out(n);
  for (auto& v : out) {
    std::string tok;
    if (!(ls >> tok)) throw FormatError("checkpoint: too few values on '" + tag + "' line");
    v = std::stod(tok);
  }
  std::string extra;
  if (ls >> extra) throw FormatError("checkpoint: too many values on '" + tag + "' line");
  return out;
}

inline std::istringstream expect_line(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("checkpoint: missing '" + key + "' line");
  std::istringstream ls(line);
  std::string got;
  ls >> got;
  if (got != key) throw FormatError("checkpoint: expected '" + key + "', found '" + got + "'");
  return ls;
}

}  // namespace detail

inline void save_mlp(std::ostream& os, const Mlp& net) {
  os << "duet-mlp " << kCheckpointVersion << '\n';
  os << "seed " << net.seed() << '\n';
  if (net.head().kind == OutputHead::Kind::bounded) {
    os << "head bounded\n";
    detail::write_values(os, "lo", net.head().lo);
    detail::write_values(os, "hi", net.head().hi);
  } else {
    os << "head logits\n";
  }
  os << "layers " << net.layers().size() << '\n';
  for (const auto& l : net.layers()) {
    const Tensor& w = l.weight.value();
    os << "layer " << w.rows() << ' ' << w.cols() << ' ' << to_string(l.activation) << (l.batch_norm ? " bn" : "")
       << '\n';
    detail::write_values(os, "weight", w);
    detail::write_values(os, "bias", l.bias.value());
  }
  os << "end\n";
}

inline Mlp load_mlp(std::istream& is) {
  int version = 0;
  if (!(detail::expect_line(is, "duet-mlp") >> version)) throw FormatError("checkpoint: missing version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  std::uint64_t seed = 0;
  if (!(detail::expect_line(is, "seed") >> seed)) throw FormatError("checkpoint: bad seed");
  std::string kind;
  detail::expect_line(is, "head") >> kind;
  OutputHead head;
  std::vector<double> lo, hi;
  if (kind == "bounded") {
    head.kind = OutputHead::Kind::bounded;
  } else if (kind != "logits") {
    throw FormatError("checkpoint: unknown head '" + kind + "'");
  }
  // The box width is only known once the last layer has been read.
  std::vector<std::string> box_lines;
  if (head.kind == OutputHead::Kind::bounded) {
    for (int i = 0; i < 2; ++i) {
      std::string line;
      if (!std::getline(is, line)) throw FormatError("checkpoint: missing head box");
      box_lines.push_back(line);
    }
  }
  std::size_t n_layers = 0;
  if (!(detail::expect_line(is, "layers") >> n_layers) || n_layers == 0)
    throw FormatError("checkpoint: bad layer count");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < n_layers; ++i) {
    std::size_t in = 0, out = 0;
    std::string act, flag, extra;
    auto header = detail::expect_line(is, "layer");
    if (!(header >> in >> out >> act) || in == 0 || out == 0)
      throw FormatError("checkpoint: bad layer header at layer " + std::to_string(i));
    const bool bn = static_cast<bool>(header >> flag);
    if ((bn && flag != "bn") || header >> extra)
      throw FormatError("checkpoint: bad layer flag at layer " + std::to_string(i));
    auto w = detail::read_values(is, "weight", in * out);
    auto b = detail::read_values(is, "bias", out);
    layers.push_back({parameter(Tensor({in, out}, std::move(w))), parameter(Tensor({out}, std::move(b))),
                      parse_activation(act), bn});
  }
  detail::expect_line(is, "end");
  if (head.kind == OutputHead::Kind::bounded) {
    const std::size_t width = layers.back().weight.value().cols();
    std::istringstream box(box_lines[0] + "\n" + box_lines[1] + "\n");
    head.lo = Tensor({width}, detail::read_values(box, "lo", width));
    head.hi = Tensor({width}, detail::read_values(box, "hi", width));
  }
  return Mlp(std::move(layers), std::move(head), seed);
}

inline void save_mlp_file(const std::string& path, const Mlp& net) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  save_mlp(os, net);
}

inline Mlp load_mlp_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  return load_mlp(is);
}

}  // namespace duet
