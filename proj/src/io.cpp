#include "mrai/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mrai {

static_assert(std::endian::native == std::endian::little,
              "file formats are written in host order and assume little-endian");

namespace {

constexpr char kDatasetMagic[8] = {'M', 'R', 'A', 'I', 'D', 'S', 'E', 'T'};
constexpr char kPairMagic[8] = {'M', 'R', 'A', 'I', 'P', 'A', 'I', 'R'};
constexpr char kWeightsMagic[8] = {'M', 'R', 'A', 'I', 'N', 'E', 'T', 'W'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot open '" + path.string() + "' for writing");
  }
  template <class T>
  void put(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), std::streamsize(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw FormatError("write to '" + path_.string() + "' failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open '" + path.string() + "' for reading");
  }
  template <class T>
  T get(const char* what) {
    T v{};
    bytes(&v, sizeof(T), what);
    return v;
  }
  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (in_.gcount() != std::streamsize(n)) {
      throw FormatError("'" + path_.string() + "' is truncated while reading " + what);
    }
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  void expect_magic(const char (&magic)[8], const char* what) {
    char buf[8];
    bytes(buf, 8, what);
    if (std::memcmp(buf, magic, 8) != 0) {
      throw FormatError("'" + path_.string() + "' does not start with the " + what + " magic");
    }
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

void put_patch(Writer& w, const Patch& p) {
  w.bytes(p.pixels.data(), sizeof(float) * p.pixels.size());
  w.put<std::int32_t>(static_cast<std::int32_t>(p.tissue));
  w.put<std::int32_t>(static_cast<std::int32_t>(p.scanner));
  w.put<std::int32_t>(p.subject_id);
  w.put<std::int32_t>(p.center_row);
  w.put<std::int32_t>(p.center_col);
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  for (const Patch& p : data.source) {
    if (p.scanner != ScannerId::source) throw FormatError("target patch in the source list");
  }
  for (const Patch& p : data.target) {
    if (p.scanner != ScannerId::target) throw FormatError("source patch in the target list");
  }
  Writer w(path);
  w.bytes(kDatasetMagic, 8);
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint64_t>(data.source.size() + data.target.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kPatchSize));
  for (const Patch& p : data.source) put_patch(w, p);
  for (const Patch& p : data.target) put_patch(w, p);
  if (data.pairs) {
    const PairSet& ps = *data.pairs;
    if (ps.n_source != data.source.size() || ps.n_target != data.target.size()) {
      throw FormatError("pair set does not belong to this dataset");
    }
    w.bytes(kPairMagic, 8);
    w.put<std::uint64_t>(ps.pairs.size());
    for (const PatchPair& p : ps.pairs) {
      w.put<std::uint32_t>(p.index_a);
      w.put<std::uint32_t>(p.index_b);
      w.put<std::uint8_t>(p.y);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(p.type));
    }
    w.put<std::uint8_t>(ps.exhausted ? 1 : 0);
  }
  w.finish();
}

Dataset read_dataset(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic(kDatasetMagic, "dataset");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>("patch count");
  const auto size = r.get<std::uint32_t>("patch size");
  if (size != kPatchSize) {
    throw FormatError("dataset patch size " + std::to_string(size) + " is not " +
                      std::to_string(kPatchSize));
  }
  Dataset d;
  for (std::uint64_t i = 0; i < count; ++i) {
    Patch p;
    r.bytes(p.pixels.data(), sizeof(float) * p.pixels.size(), "patch pixels");
    const auto tissue = r.get<std::int32_t>("tissue");
    const auto scanner = r.get<std::int32_t>("scanner");
    if (tissue < 0 || tissue > 3) throw FormatError("invalid tissue id in dataset");
    if (scanner < 0 || scanner > 1) throw FormatError("invalid scanner id in dataset");
    p.tissue = static_cast<Tissue>(tissue);
    p.scanner = static_cast<ScannerId>(scanner);
    p.subject_id = r.get<std::int32_t>("subject");
    p.center_row = r.get<std::int32_t>("center row");
    p.center_col = r.get<std::int32_t>("center col");
    if (p.scanner == ScannerId::source) {
      if (!d.target.empty()) throw FormatError("source patch stored after target patches");
      d.source.push_back(p);
    } else {
      d.target.push_back(p);
    }
  }
  if (!r.at_end()) {
    r.expect_magic(kPairMagic, "pair section");
    PairSet ps;
    ps.n_source = d.source.size();
    ps.n_target = d.target.size();
    const auto n = r.get<std::uint64_t>("pair count");
    for (std::uint64_t i = 0; i < n; ++i) {
      PatchPair p;
      p.index_a = r.get<std::uint32_t>("pair index");
      p.index_b = r.get<std::uint32_t>("pair index");
      p.y = r.get<std::uint8_t>("pair label");
      const auto type = r.get<std::uint8_t>("pair type");
      if (type >= kPairTypeCount || p.y > 1 || p.index_a >= count || p.index_b >= count) {
        throw FormatError("invalid pair record " + std::to_string(i));
      }
      p.type = static_cast<PairType>(type);
      ++ps.type_counts[type];
      ps.pairs.push_back(p);
    }
    ps.exhausted = r.get<std::uint8_t>("exhausted flag") != 0;
    d.pairs = std::move(ps);
  }
  if (!r.at_end()) throw FormatError("trailing bytes in '" + path.string() + "'");
  return d;
}

namespace {

struct LayerRecord {
  std::uint32_t kind = 0;
  std::uint32_t a = 0, b = 0, c = 0;
  double rate = 0.0;
};

LayerRecord encode(const nn::LayerSpec& l) {
  LayerRecord r;
  r.kind = static_cast<std::uint32_t>(l.index());
  if (const auto* c = std::get_if<nn::Conv2D>(&l)) {
    r.a = std::uint32_t(c->in_channels);
    r.b = std::uint32_t(c->out_channels);
    r.c = std::uint32_t(c->kernel);
  } else if (const auto* d = std::get_if<nn::Dense>(&l)) {
    r.a = std::uint32_t(d->in);
    r.b = std::uint32_t(d->out);
  } else if (const auto* p = std::get_if<nn::Dropout>(&l)) {
    r.rate = p->rate;
  }
  return r;
}

nn::LayerSpec decode(const LayerRecord& r) {
  switch (r.kind) {
    case 0: return nn::Conv2D{r.a, r.b, r.c};
    case 1: return nn::Relu{};
    case 2: return nn::Dropout{r.rate};
    case 3: return nn::Flatten{};
    case 4: return nn::Dense{r.a, r.b};
    default: throw FormatError("unknown layer kind " + std::to_string(r.kind));
  }
}

}  // namespace

void save_params(const std::filesystem::path& path, const nn::NetworkParams& params) {
  const auto& arch = params.architecture();
  Writer w(path);
  w.bytes(kWeightsMagic, 8);
  w.put<std::uint32_t>(kWeightsVersion);
  w.put<std::uint32_t>(std::uint32_t(arch.input().channels));
  w.put<std::uint32_t>(std::uint32_t(arch.input().height));
  w.put<std::uint32_t>(std::uint32_t(arch.input().width));
  w.put<std::uint32_t>(std::uint32_t(arch.layers().size()));
  for (const auto& l : arch.layers()) {
    const LayerRecord r = encode(l);
    w.put(r.kind);
    w.put(r.a);
    w.put(r.b);
    w.put(r.c);
    w.put(r.rate);
  }
  const auto values = params.values();
  w.put<std::uint64_t>(values.size());
  w.bytes(values.data(), values.size() * sizeof(double));
  w.finish();
}

nn::NetworkParams load_params(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic(kWeightsMagic, "weight file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version));
  }
  nn::Shape3 input;
  input.channels = r.get<std::uint32_t>("input shape");
  input.height = r.get<std::uint32_t>("input shape");
  input.width = r.get<std::uint32_t>("input shape");
  const auto n_layers = r.get<std::uint32_t>("layer count");
  std::vector<nn::LayerSpec> layers;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerRecord rec;
    rec.kind = r.get<std::uint32_t>("layer kind");
    rec.a = r.get<std::uint32_t>("layer field");
    rec.b = r.get<std::uint32_t>("layer field");
    rec.c = r.get<std::uint32_t>("layer field");
    rec.rate = r.get<double>("layer rate");
    layers.push_back(decode(rec));
  }
  nn::NetworkParams params(nn::Architecture(input, std::move(layers)));
  const auto count = r.get<std::uint64_t>("parameter count");
  if (count != params.size()) {
    throw FormatError("weight file holds " + std::to_string(count) +
                      " parameters, architecture needs " + std::to_string(params.size()));
  }
  auto values = params.mutable_values();
  r.bytes(values.data(), values.size() * sizeof(double), "parameters");
  if (!r.at_end()) throw FormatError("trailing bytes in '" + path.string() + "'");
  return params;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv,
                      const std::string& header) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  if (!header.empty()) out << "# " << header << "\n";
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void describe_protocol(KeyValues& kv, const std::string& prefix, const ScannerProtocol& p) {
  kv[prefix + ".name"] = p.name;
  kv[prefix + ".field_strength_t"] = format_double(p.field_strength_t);
  kv[prefix + ".flip_angle_deg"] = format_double(p.flip_angle_deg);
  kv[prefix + ".tr_ms"] = format_double(p.tr_ms);
  kv[prefix + ".te_ms"] = format_double(p.te_ms);
  kv[prefix + ".noise_sigma"] = format_double(p.noise_sigma);
  for (Tissue t : {Tissue::background, Tissue::csf, Tissue::gray_matter, Tissue::white_matter}) {
    const auto& n = p.tissue_params[t];
    const std::string base = prefix + "." + tissue_name(t);
    kv[base + ".t1_ms"] = format_double(n.t1_ms);
    kv[base + ".t2star_ms"] = format_double(n.t2star_ms);
    kv[base + ".pd"] = format_double(n.proton_density);
  }
}

}  // namespace mrai
