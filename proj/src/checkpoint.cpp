#include "protlang/checkpoint.hpp"

#include <algorithm>

#include "io_util.hpp"
#include "protlang/rng.hpp"

namespace protlang {

namespace {
constexpr char kMagic[4] = {'P', 'L', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& tensors) {
  ioutil::atomic_write(path, [&](std::ofstream& os) {
    ioutil::write_bytes(os, kMagic, 4);
    ioutil::write_u32(os, kVersion);
    ioutil::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      std::size_t numel = 1;
      for (std::size_t d : t.shape) numel *= d;
      if (numel != t.values.size())
        throw ContractError("checkpoint record " + t.name + " has inconsistent payload size");
      ioutil::write_u32(os, static_cast<std::uint32_t>(t.name.size()));
      ioutil::write_bytes(os, t.name.data(), t.name.size());
      ioutil::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t d : t.shape) ioutil::write_u64(os, static_cast<std::uint64_t>(d));
      ioutil::write_bytes(os, t.values.data(), t.values.size() * sizeof(float));
    }
  });
}

std::vector<TensorRecord> load_checkpoint(const std::string& path) {
  auto is = ioutil::open_read(path);
  char magic[4] = {};
  ioutil::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path + ": bad magic, not a checkpoint file");
  const std::uint32_t version = ioutil::read_u32(is, "version");
  if (version != kVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = ioutil::read_u32(is, "tensor count");
  std::vector<TensorRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const std::uint32_t name_len = ioutil::read_u32(is, "name length");
    r.name.resize(name_len);
    ioutil::read_bytes(is, r.name.data(), name_len, "tensor name");
    const std::uint32_t rank = ioutil::read_u32(is, "rank");
    if (rank == 0 || rank > 8) throw FormatError(path + ": implausible rank for " + r.name);
    std::size_t numel = 1;
    r.shape.resize(rank);
    for (std::uint32_t d = 0; d < rank; ++d) {
      r.shape[d] = static_cast<std::size_t>(ioutil::read_u64(is, "dimension"));
      if (r.shape[d] == 0) throw FormatError(path + ": zero dimension for " + r.name);
      numel *= r.shape[d];
    }
    r.values.resize(numel);
    ioutil::read_bytes(is, r.values.data(), numel * sizeof(float), r.name.c_str());
    out.push_back(std::move(r));
  }
  return out;
}

template <class S>
TensorRecord to_record(const std::string& name, const Tensor<S>& t) {
  TensorRecord r;
  r.name = name;
  r.shape = t.shape();
  r.values.resize(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = static_cast<float>(src[i]);
  return r;
}

template <class S>
void assign_from_record(Tensor<S>& t, const TensorRecord& r) {
  if (t.shape() != r.shape)
    throw ContractError("checkpoint record " + r.name + " has shape " + shape_str(r.shape) +
                        ", parameter expects " + shape_str(t.shape()));
  auto dst = t.raw();
  for (std::size_t i = 0; i < r.values.size(); ++i) dst[i] = static_cast<S>(r.values[i]);
}

template <class S>
void load_into_params(const std::vector<TensorRecord>& records,
                      std::vector<NamedTensor<S>> params) {
  for (auto& p : params) {
    const TensorRecord* found = nullptr;
    for (const auto& r : records)
      if (r.name == p.name) {
        found = &r;
        break;
      }
    if (!found) throw NotFoundError("checkpoint has no tensor named " + p.name);
    assign_from_record(p.tensor, *found);
  }
}

template <class S>
std::uint64_t params_hash(const std::vector<NamedTensor<S>>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto fold = [&h](const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(c[i]);
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : params) {
    fold(p.name.data(), p.name.size());
    // hash the f32 image so f32 and f64 runs of identical values agree
    for (S v : p.tensor.data()) {
      float f = static_cast<float>(v);
      fold(&f, sizeof(float));
    }
  }
  return h;
}

template TensorRecord to_record<float>(const std::string&, const Tensor<float>&);
template TensorRecord to_record<double>(const std::string&, const Tensor<double>&);
template void assign_from_record<float>(Tensor<float>&, const TensorRecord&);
template void assign_from_record<double>(Tensor<double>&, const TensorRecord&);
template void load_into_params<float>(const std::vector<TensorRecord>&,
                                      std::vector<NamedTensor<float>>);
template void load_into_params<double>(const std::vector<TensorRecord>&,
                                       std::vector<NamedTensor<double>>);
template std::uint64_t params_hash<float>(const std::vector<NamedTensor<float>>&);
template std::uint64_t params_hash<double>(const std::vector<NamedTensor<double>>&);

}  // namespace protlang
