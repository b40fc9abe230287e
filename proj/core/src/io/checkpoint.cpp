#include "mammut/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

#include "mammut/errors.hpp"

namespace mammut::io {

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_ += static_cast<char>((v >> (8 * i)) & 0xff);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_ += static_cast<char>((v >> (8 * i)) & 0xff);
  }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void raw(const std::string& s) { out_ += s; }
  void values(const Buffer& b) {
    if (b.precision() == Precision::f32) {
      for (float f : b.as<float>()) u32(std::bit_cast<std::uint32_t>(f));
    } else {
      for (double d : b.as<double>()) u64(std::bit_cast<std::uint64_t>(d));
    }
  }
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::string path) : in_(bytes), path_(std::move(path)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Buffer values(Precision p, std::uint64_t n) {
    need(n * (p == Precision::f32 ? 4 : 8));
    Buffer b(p, n);
    if (p == Precision::f32) {
      for (auto& f : b.as<float>()) f = std::bit_cast<float>(u32());
    } else {
      for (auto& d : b.as<double>()) d = std::bit_cast<double>(u64());
    }
    return b;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw CheckpointError(path_ + ": truncated checkpoint");
  }
  std::string_view in_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

RunConfig Checkpoint::config() const {
  std::istringstream in(config_text);
  return parse_run_config(in);
}

Checkpoint capture(const RunConfig& config, const Mammut& model, const AdamW* optimizer,
                   const std::mt19937_64* rng, std::uint64_t step) {
  Checkpoint ck;
  ck.config_text = to_text(config);
  ck.step = step;
  const auto& entries = model.parameters().entries();
  if (!entries.empty()) ck.precision = entries.front().second.precision();
  for (const auto& [name, t] : entries) {
    if (t.precision() != ck.precision) throw CheckpointError("parameters mix precisions at '" + name + "'");
    ck.parameters.push_back({name, t.shape(), t.buffer()});
  }
  if (rng) {
    std::ostringstream os;
    os << *rng;
    ck.rng_state = os.str();
  }
  if (optimizer) {
    ck.optimizer_steps = optimizer->steps();
    for (const auto& m : optimizer->moments()) ck.moments.push_back({m.name, m.m, m.v});
  }
  return ck;
}

Checkpoint capture(const RunConfig& config, const Trainer& trainer) {
  return capture(config, trainer.model(), &trainer.optimizer(), &trainer.rng(), trainer.step());
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  Writer w;
  w.raw(std::string(kCheckpointMagic) + "\n");
  w.str(ck.config_text);
  w.u64(ck.precision == Precision::f32 ? 4 : 8);
  w.u64(ck.step);
  w.str(ck.rng_state);
  w.u64(ck.parameters.size());
  for (const auto& p : ck.parameters) {
    if (p.values.precision() != ck.precision || p.values.size() != numel(p.shape)) {
      throw CheckpointError("inconsistent parameter '" + p.name + "'");
    }
    w.str(p.name);
    w.u64(p.shape.size());
    for (auto e : p.shape) w.u64(e);
    w.values(p.values);
  }
  w.u64(ck.optimizer_steps);
  w.u64(ck.moments.size());
  for (const auto& m : ck.moments) {
    if (m.m.precision() != ck.precision || m.v.precision() != ck.precision || m.m.size() != m.v.size()) {
      throw CheckpointError("inconsistent optimizer moments for '" + m.name + "'");
    }
    w.str(m.name);
    w.u64(m.m.size());
    w.values(m.m);
    w.values(m.v);
  }
  const std::uint64_t checksum = fnv1a(w.bytes());
  w.u64(checksum);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("cannot move checkpoint into place at '" + path + "'");
  }
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string magic = std::string(kCheckpointMagic) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw CheckpointError(path + ": not a MAMMUT1 checkpoint");
  if (bytes.size() < magic.size() + 8) throw CheckpointError(path + ": truncated checkpoint");
  const std::string_view body(bytes.data(), bytes.size() - 8);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 8), path);
  if (tail.u64() != fnv1a(body)) throw CheckpointError(path + ": checksum mismatch");

  Reader r(body.substr(magic.size()), path);
  Checkpoint ck;
  ck.config_text = r.str();
  const std::uint64_t width = r.u64();
  if (width != 4 && width != 8) throw CheckpointError(concat(path, ": unsupported value width ", width));
  ck.precision = width == 4 ? Precision::f32 : Precision::f64;
  ck.step = r.u64();
  ck.rng_state = r.str();
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray p;
    p.name = r.str();
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw CheckpointError(concat(path, ": parameter '", p.name, "' has rank ", rank));
    for (std::uint64_t k = 0; k < rank; ++k) p.shape.push_back(r.u64());
    p.values = r.values(ck.precision, numel(p.shape));
    ck.parameters.push_back(std::move(p));
  }
  ck.optimizer_steps = r.u64();
  const std::uint64_t moments = r.u64();
  for (std::uint64_t i = 0; i < moments; ++i) {
    OptimizerMoments m;
    m.name = r.str();
    const std::uint64_t n = r.u64();
    m.m = r.values(ck.precision, n);
    m.v = r.values(ck.precision, n);
    ck.moments.push_back(std::move(m));
  }
  if (!r.done()) throw CheckpointError(path + ": trailing bytes after optimizer state");
  return ck;
}

namespace {

void copy_values(const Buffer& from, Buffer& to) {
  if (from.precision() == to.precision()) {
    to = from;
    return;
  }
  for (std::size_t i = 0; i < from.size(); ++i) to.set(i, from.get(i));
}

}  // namespace

LoadReport load_parameters(const Checkpoint& ck, Mammut& model, bool allow_partial) {
  ParameterStore& store = model.parameters();
  LoadReport report;
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& p : ck.parameters) {
    by_name[p.name] = &p;
    if (!store.contains(p.name)) report.unexpected.push_back(p.name);
  }
  for (const auto& [name, t] : store.entries()) {
    if (!by_name.count(name)) report.missing.push_back(name);
  }
  if (!allow_partial && (!report.missing.empty() || !report.unexpected.empty())) {
    std::string msg = "checkpoint does not match the model";
    if (!report.missing.empty()) msg += concat("; missing ", report.missing.size(), " (first '", report.missing[0], "')");
    if (!report.unexpected.empty()) {
      msg += concat("; unexpected ", report.unexpected.size(), " (first '", report.unexpected[0], "')");
    }
    throw CheckpointError(msg + "; use --allow-partial to load the overlap");
  }
  for (const auto& [name, t] : store.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) continue;
    if (it->second->shape != t.shape()) {
      throw CheckpointError(concat("parameter '", name, "' has shape ", to_string(it->second->shape),
                                   " in the checkpoint but ", to_string(t.shape()), " in the model"));
    }
  }
  for (const auto& [name, t] : store.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) continue;
    Tensor handle = t;
    copy_values(it->second->values, handle.mutable_buffer());
  }
  return report;
}

void restore(const Checkpoint& ck, Trainer& trainer) {
  load_parameters(ck, trainer.model(), false);
  auto& moments = trainer.optimizer().moments();
  if (moments.size() != ck.moments.size()) {
    throw CheckpointError(concat("checkpoint holds ", ck.moments.size(), " optimizer entries, trainer has ",
                                 moments.size()));
  }
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].name != ck.moments[i].name || moments[i].m.size() != ck.moments[i].m.size()) {
      throw CheckpointError("optimizer state does not match parameter '" + moments[i].name + "'");
    }
    copy_values(ck.moments[i].m, moments[i].m);
    copy_values(ck.moments[i].v, moments[i].v);
  }
  trainer.optimizer().set_steps(ck.optimizer_steps);
  if (ck.rng_state.empty()) throw CheckpointError("checkpoint has no RNG state to resume from");
  std::istringstream in(ck.rng_state);
  in >> trainer.rng();
  if (!in) throw CheckpointError("corrupt RNG state in checkpoint");
  trainer.set_step(ck.step);
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

}  // namespace mammut::io
