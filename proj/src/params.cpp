#include "molmamba/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "molmamba/error.hpp"

namespace molmamba {

namespace {

constexpr std::string_view kMagic = "MMCKPT1";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ValidationError("checkpoint: truncated file");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t ParamStore::add(std::string name, Shape shape, std::vector<double> init) {
  if (by_name_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  if (numel(shape) != init.size()) throw ValidationError("parameter " + name + ": init size mismatch");
  const std::size_t idx = params_.size();
  by_name_.emplace(name, idx);
  params_.push_back({std::move(name), std::move(shape), std::make_shared<std::vector<double>>(std::move(init))});
  return idx;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ValidationError("unknown parameter: " + std::string(name));
  return it->second;
}

std::size_t ParamStore::total_elements() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value->size();
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& p : params_) out.add(p.name, p.shape, *p.value);
  return out;
}

void ParamStore::assign_from(const ParamStore& other) {
  if (other.size() != size()) throw ValidationError("parameter stores differ in size");
  for (std::size_t i = 0; i < size(); ++i) {
    if (other[i].name != params_[i].name || other[i].shape != params_[i].shape) {
      throw ValidationError("parameter layout mismatch at " + params_[i].name);
    }
    *params_[i].value = *other[i].value;
  }
}

std::size_t ParamStore::assign_shared(const ParamStore& other) {
  std::size_t copied = 0;
  for (const auto& src : other) {
    if (!contains(src.name)) continue;
    auto& dst = params_[index(src.name)];
    if (dst.shape != src.shape) {
      throw ValidationError("parameter " + src.name + " has shape " + shape_str(src.shape) + ", expected " +
                            shape_str(dst.shape));
    }
    *dst.value = *src.value;
    ++copied;
  }
  return copied;
}

GradientSet ParamStore::zero_gradients() const {
  GradientSet g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value->size(), 0.0);
  return g;
}

Tensor Binding::operator()(std::size_t index) const {
  auto& leaf = leaves_.at(index);
  if (!leaf.defined()) {
    const auto& p = (*store_)[index];
    leaf = Tensor::shared_leaf(p.shape, p.value);
  }
  return leaf;
}

void Binding::accumulate_into(GradientSet& into) const {
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (!leaves_[i].defined()) continue;
    const auto g = leaves_[i].grad();
    if (g.empty()) continue;
    auto& dst = into[i];
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  }
}

std::vector<double> init_fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t count) {
  const double a = std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::vector<double> v(count);
  for (auto& x : v) x = rng.uniform(-a, a);
  return v;
}

std::vector<double> init_constant(std::size_t count, double value) { return std::vector<double>(count, value); }

std::string serialize_checkpoint(const ParamStore& store) {
  std::string out(kMagic);
  put_u64(out, store.size());
  for (const auto& p : store) {
    put_u64(out, p.name.size());
    out += p.name;
    put_u64(out, p.shape.size());
    for (auto e : p.shape) put_u64(out, e);
    for (double v : *p.value) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

void deserialize_checkpoint(std::string_view bytes, ParamStore& store) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw ValidationError("checkpoint: bad magic header");
  const auto count = r.u64();
  if (count != store.size()) {
    throw ValidationError("checkpoint: holds " + std::to_string(count) + " parameters, model expects " +
                          std::to_string(store.size()));
  }
  std::vector<std::vector<double>> staged(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name(r.take(r.u64()));
    const auto idx = store.index(name);
    Shape shape(r.u64());
    for (auto& e : shape) e = r.u64();
    if (shape != store[idx].shape) {
      throw ValidationError("checkpoint: parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                            shape_str(store[idx].shape));
    }
    auto& dst = staged[idx];
    dst.resize(numel(shape));
    for (auto& v : dst) v = std::bit_cast<double>(r.u64());
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  for (std::size_t i = 0; i < count; ++i) {
    if (staged[i].size() != store.values(i).size()) throw ValidationError("checkpoint: missing " + store[i].name);
    std::copy(staged[i].begin(), staged[i].end(), store.values(i).begin());
  }
}

ParamStore checkpoint_contents(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw ValidationError("checkpoint: bad magic header");
  const auto count = r.u64();
  ParamStore out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(r.take(r.u64()));
    Shape shape(r.u64());
    for (auto& e : shape) e = r.u64();
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(r.u64());
    out.add(std::move(name), std::move(shape), std::move(values));
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write checkpoint " + path.string());
  const auto bytes = serialize_checkpoint(store);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_checkpoint_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read checkpoint " + path.string());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  deserialize_checkpoint(read_checkpoint_bytes(path), store);
}

}  // namespace molmamba
