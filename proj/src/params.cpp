#include "cplab/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cplab/rng.hpp"

namespace cplab {

NdArray& ParameterStore::add(const std::string& name, NdArray init) {
  if (contains(name)) throw std::invalid_argument("parameter already exists: " + name);
  ParamEntry e;
  e.m = NdArray(init.shape(), 0.0);
  e.v = NdArray(init.shape(), 0.0);
  e.value = std::move(init);
  return entries_.emplace(name, std::move(e)).first->second.value;
}

const ParamEntry& ParameterStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

ParamEntry& ParameterStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const NdArray& ParameterStore::value(const std::string& name) const { return entry(name).value; }

void ParameterStore::set_value(const std::string& name, const NdArray& value) {
  ParamEntry& e = entry(name);
  if (e.value.shape() != value.shape())
    throw ShapeError("set_value(" + name + "): shape " + shape_str(value.shape()) +
                     " differs from " + shape_str(e.value.shape()));
  e.value = value;
}

std::span<double> ParameterStore::mutable_values(const std::string& name) {
  return entry(name).value.data();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (auto ia = a.entries_.begin(), ib = b.entries_.begin(); ia != a.entries_.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    const ParamEntry& x = ia->second;
    const ParamEntry& y = ib->second;
    if (!(x.value == y.value) || !(x.m == y.m) || !(x.v == y.v) || x.step != y.step) return false;
  }
  return true;
}

NdArray glorot_uniform(std::size_t fan_in, std::size_t fan_out, SeededRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  NdArray w(Shape{fan_in, fan_out});
  for (auto& x : w.values()) x = (2.0 * rng.uniform() - 1.0) * bound;
  return w;
}

void adam_step(ParameterStore& store, const GradMap& grads, const AdamHyper& hyper) {
  for (auto& [name, e] : store.entries()) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const NdArray& g = it->second;
    if (g.shape() != e.value.shape())
      throw ShapeError("adam_step(" + name + "): gradient shape " + shape_str(g.shape()) +
                       " vs parameter " + shape_str(e.value.shape()));
    e.step += 1;
    const double t = static_cast<double>(e.step);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < g.size(); ++i) {
      e.m[i] = hyper.beta1 * e.m[i] + (1.0 - hyper.beta1) * g[i];
      e.v[i] = hyper.beta2 * e.v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double mhat = e.m[i] / c1;
      const double vhat = e.v[i] / c2;
      e.value[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

double grad_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (double x : g.values()) s += x * x;
  return std::sqrt(s);
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64s(std::vector<std::uint8_t>& out, const NdArray& a) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(a.data().data());
  out.insert(out.end(), p, p + a.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n, "name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void f64s(NdArray& a, const char* what) {
    need(a.size() * sizeof(double), what);
    std::memcpy(a.data().data(), bytes_.data() + pos_, a.size() * sizeof(double));
    pos_ += a.size() * sizeof(double);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParameterStore& store) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u64(out, store.size());
  for (const auto& [name, e] : store.entries()) {
    put_u64(out, name.size());
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, e.value.rank());
    for (auto d : e.value.shape()) put_u64(out, d);
    put_f64s(out, e.value);
    put_f64s(out, e.m);
    put_f64s(out, e.v);
    put_u64(out, e.step);
  }
  return out;
}

ParameterStore deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("checkpoint magic mismatch (expected CPLAB01)");
  std::vector<std::uint8_t> body(bytes.begin() + sizeof(kCheckpointMagic), bytes.end());
  Reader r(body);
  const std::uint64_t count = r.u64("entry count");
  ParameterStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t len = r.u64("name length");
    if (len > r.remaining()) throw CheckpointError("checkpoint name length exceeds file size");
    std::string name = r.str(len);
    const std::uint64_t rank = r.u64("rank");
    if (rank == 0 || rank > 8) throw CheckpointError("checkpoint entry " + name + " has invalid rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      const std::uint64_t d = r.u64("dims");
      if (d == 0 || d > r.remaining()) throw CheckpointError("checkpoint entry " + name + " has invalid dims");
      shape.push_back(d);
      n *= d;
    }
    if (n * sizeof(double) * 3 > r.remaining())
      throw CheckpointError("checkpoint truncated in entry " + name);
    ParamEntry e;
    e.value = NdArray(shape);
    e.m = NdArray(shape);
    e.v = NdArray(shape);
    r.f64s(e.value, "values");
    r.f64s(e.m, "first moments");
    r.f64s(e.v, "second moments");
    e.step = r.u64("step count");
    if (store.contains(name)) throw CheckpointError("duplicate checkpoint entry " + name);
    store.add(name, e.value);
    store.entry(name) = std::move(e);
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint entries");
  return store;
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(store);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace cplab
