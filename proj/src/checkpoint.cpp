#include "mmer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace mmer {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'E', 'R', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { little(v, 4); }
  void u64(std::uint64_t v) { little(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& data() const { return buf_; }

 private:
  void little(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}
  std::uint64_t little(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
  std::uint64_t u64() { return little(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(u32()); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) throw CheckpointError(origin_ + ": truncated checkpoint");
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const Model& model) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  const std::string text = to_text(config);
  w.u64(text.size());
  w.raw(text.data(), text.size());
  const auto& stats = model.normalization;
  w.u32(static_cast<std::uint32_t>(stats.mean.size()));
  for (std::size_t m = 0; m < stats.mean.size(); ++m) {
    w.bytes(model.config.modalities.at(m).name);
    w.u64(static_cast<std::uint64_t>(stats.mean[m].size()));
    for (Index j = 0; j < stats.mean[m].size(); ++j) w.f64(stats.mean[m](j));
    for (Index j = 0; j < stats.stddev[m].size(); ++j) w.f64(stats.stddev[m](j));
  }
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (Index e : p.tensor.shape()) w.u64(static_cast<std::uint64_t>(e));
    const RowMatrix& v = p.tensor.value();
    for (Index i = 0; i < v.size(); ++i) w.f64(v.data()[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(path.string() + ": cannot write");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw CheckpointError(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw CheckpointError(path.string() + ": not a checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::string text = r.bytes(r.u64());
  Checkpoint ck{parse_config(text, path.string() + "#config"), {}};
  Rng placeholder(0);
  ck.model = Model::init(ck.config.model, placeholder);

  const auto modalities = r.u32();
  if (modalities != 0 && modalities != ck.config.model.modalities.size()) {
    throw CheckpointError(path.string() + ": normalisation statistics do not match the modalities");
  }
  for (std::uint32_t m = 0; m < modalities; ++m) {
    const std::string name = r.str();
    if (name != ck.config.model.modalities[m].name) throw CheckpointError(path.string() + ": unexpected modality " + name);
    const auto width = static_cast<Index>(r.u64());
    Vector mean(width), sd(width);
    for (Index j = 0; j < width; ++j) mean(j) = r.f64();
    for (Index j = 0; j < width; ++j) sd(j) = r.f64();
    ck.model.normalization.mean.push_back(std::move(mean));
    ck.model.normalization.stddev.push_back(std::move(sd));
  }

  auto params = ck.model.parameters();
  std::map<std::string, Tensor> by_name;
  for (auto& p : params) by_name.emplace(p.name, p.tensor);
  const auto count = r.u32();
  if (count != params.size()) {
    throw CheckpointError(path.string() + ": expected " + std::to_string(params.size()) + " parameters, found " +
                          std::to_string(count));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError(path.string() + ": unknown parameter " + name);
    const auto rank = r.u32();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<Index>(r.u64()));
    if (shape != it->second.shape()) {
      throw CheckpointError(path.string() + ": parameter " + name + " has shape " + to_string(shape) + ", expected " +
                            to_string(it->second.shape()));
    }
    RowMatrix& v = it->second.mutable_value();
    for (Index j = 0; j < v.size(); ++j) v.data()[j] = r.f64();
  }
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes");
  return ck;
}

}  // namespace mmer
