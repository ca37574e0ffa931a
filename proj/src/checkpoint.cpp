#include "ivgen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ivgen {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void put_array(const std::string& name, const double* p, std::size_t n) {
    put_string(name);
    put<std::uint64_t>(n);
    buf_.append(reinterpret_cast<const char*>(p), n * sizeof(double));
    ++arrays_;
  }
  void put_array(const std::string& name, const std::vector<double>& v) { put_array(name, v.data(), v.size()); }
  void put_array(const std::string& name, const Vector& v) {
    put_array(name, v.data(), static_cast<std::size_t>(v.size()));
  }
  std::string& bytes() { return buf_; }
  std::uint32_t arrays() const { return arrays_; }

 private:
  std::string buf_;
  std::uint32_t arrays_ = 0;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    T v{};
    need(sizeof v);
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> get_array(const std::string& expected, std::size_t expected_size) {
    const std::string name = get_string();
    if (name != expected) fail(ErrorKind::format, "checkpoint: expected array " + expected + ", found " + name);
    const auto n = get<std::uint64_t>();
    if (n != expected_size) {
      fail(ErrorKind::format, "checkpoint: array " + name + " has " + std::to_string(n) + " values, expected " +
                                  std::to_string(expected_size));
    }
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  Vector get_vector(const std::string& name, std::size_t n) {
    const auto v = get_array(name, n);
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(n));
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::format, "checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& tr = ckpt.transforms;
  const auto& fpca = ckpt.fpca;
  const auto e = tr.equities.size();
  const Eigen::Index m = fpca.n_components();
  const Eigen::Index b = fpca.basis.size();
  if (tr.per_equity.size() != e) fail(ErrorKind::shape, "transform spec is inconsistent");

  Writer w;
  w.bytes().append("IVGN", 4);
  w.put<std::uint32_t>(Checkpoint::version);
  const NsdeModel* model = ckpt.model ? &*ckpt.model : nullptr;
  w.put<std::uint64_t>(static_cast<std::uint64_t>(ckpt.state_dim()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(m));
  w.put<std::uint64_t>(e);
  w.put<std::uint64_t>(model ? static_cast<std::uint64_t>(model->lag) : 0);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(b));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(fpca.basis.order_cap));
  w.put<std::uint64_t>(model ? static_cast<std::uint64_t>(model->drift_net.hidden_dim()) : 0);
  w.put<std::uint64_t>(model ? static_cast<std::uint64_t>(model->drift_net.n_layers()) : 0);
  w.put<double>(model ? model->dt : 0.0);
  w.put<double>(model ? model->eps : 0.0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
  for (const auto& name : tr.equities) w.put_string(name);

  std::string arrays;
  std::swap(arrays, w.bytes());
  Writer body;
  body.put_array("transform.tau_max", {tr.tau_max});
  body.put_array("transform.fit_length", {static_cast<double>(tr.fit_length)});
  auto field = [&](const char* name, double EquityTransform::*member) {
    std::vector<double> v;
    for (const auto& t : tr.per_equity) v.push_back(t.*member);
    body.put_array(name, v);
  };
  field("transform.iv_c0", &EquityTransform::iv_c0);
  field("transform.iv_c1", &EquityTransform::iv_c1);
  field("transform.price_c0", &EquityTransform::price_c0);
  field("transform.price_c1", &EquityTransform::price_c1);
  field("transform.detrend_beta0", &EquityTransform::detrend_beta0);
  field("transform.detrend_beta1", &EquityTransform::detrend_beta1);
  std::vector<double> members;
  for (const auto& [i, j] : fpca.basis.members) {
    members.push_back(i);
    members.push_back(j);
  }
  body.put_array("basis.members", members);
  body.put_array("fpca.mean", fpca.mean_coeffs);
  const RowMatrix comps = fpca.components;
  body.put_array("fpca.components", comps.data(), static_cast<std::size_t>(comps.size()));
  body.put_array("fpca.eigenvalues", fpca.eigenvalues);
  body.put_array("fpca.all_eigenvalues", fpca.all_eigenvalues);
  body.put_array("fpca.explained", fpca.explained);
  if (model) {
    body.put_array("norm.center", model->norm_center);
    body.put_array("norm.scale", model->norm_scale);
    body.put_array("drift.params", model->drift_net.params());
    body.put_array("diff.params", model->diff_net.params());
  }
  std::uint32_t count = body.arrays();
  arrays.append(reinterpret_cast<const char*>(&count), sizeof count);
  arrays.append(body.bytes());
  const std::uint64_t hash = fnv1a(arrays);
  arrays.append(reinterpret_cast<const char*>(&hash), sizeof hash);
  out.write(arrays.data(), static_cast<std::streamsize>(arrays.size()));
  if (!out) fail(ErrorKind::io, "failed to write checkpoint");
}

Checkpoint load_checkpoint(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || bytes.compare(0, 4, "IVGN") != 0) fail(ErrorKind::format, "not a checkpoint file");
  Reader r(std::string_view(bytes).substr(4));
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::version) {
    fail(ErrorKind::format, "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                std::to_string(Checkpoint::version) + ")");
  }
  if (bytes.size() < 16) fail(ErrorKind::format, "checkpoint truncated");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a(bytes.substr(0, bytes.size() - 8)) != stored) fail(ErrorKind::format, "checkpoint checksum mismatch");

  const auto d = r.get<std::uint64_t>();
  const auto m = r.get<std::uint64_t>();
  const auto e = r.get<std::uint64_t>();
  const auto lag = r.get<std::uint64_t>();
  const auto b = r.get<std::uint64_t>();
  const auto order = r.get<std::uint64_t>();
  const auto hidden = r.get<std::uint64_t>();
  const auto layers = r.get<std::uint64_t>();
  const auto dt = r.get<double>();
  const auto eps = r.get<double>();
  if (d != m * e + e) fail(ErrorKind::format, "checkpoint header: D != M*E + E");
  if (static_cast<Eigen::Index>(b) != basis_size(static_cast<int>(order))) {
    fail(ErrorKind::format, "checkpoint header: basis size does not match the order cap");
  }

  Checkpoint ck;
  const auto n_names = r.get<std::uint32_t>();
  if (n_names != e) fail(ErrorKind::format, "checkpoint header: equity count mismatch");
  for (std::uint32_t i = 0; i < n_names; ++i) ck.transforms.equities.push_back(r.get_string());
  const bool trained = hidden > 0;
  const auto n_arrays = r.get<std::uint32_t>();
  if (n_arrays != (trained ? 18u : 14u)) fail(ErrorKind::format, "checkpoint: unexpected array count");

  auto& tr = ck.transforms;
  tr.tau_max = r.get_array("transform.tau_max", 1)[0];
  tr.fit_length = static_cast<std::int64_t>(r.get_array("transform.fit_length", 1)[0]);
  tr.per_equity.resize(e);
  auto field = [&](const char* name, double EquityTransform::*member) {
    const auto v = r.get_array(name, e);
    for (std::size_t i = 0; i < e; ++i) tr.per_equity[i].*member = v[i];
  };
  field("transform.iv_c0", &EquityTransform::iv_c0);
  field("transform.iv_c1", &EquityTransform::iv_c1);
  field("transform.price_c0", &EquityTransform::price_c0);
  field("transform.price_c1", &EquityTransform::price_c1);
  field("transform.detrend_beta0", &EquityTransform::detrend_beta0);
  field("transform.detrend_beta1", &EquityTransform::detrend_beta1);

  ck.fpca.basis = enumerate_basis(static_cast<int>(order));
  const auto members = r.get_array("basis.members", 2 * b);
  for (std::size_t k = 0; k < b; ++k) {
    const auto [i, j] = ck.fpca.basis.members[k];
    if (members[2 * k] != i || members[2 * k + 1] != j) fail(ErrorKind::format, "checkpoint: basis enumeration differs");
  }
  ck.fpca.mean_coeffs = r.get_vector("fpca.mean", b);
  const auto comps = r.get_array("fpca.components", m * b);
  ck.fpca.components = Eigen::Map<const RowMatrix>(comps.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(b));
  ck.fpca.eigenvalues = r.get_vector("fpca.eigenvalues", m);
  ck.fpca.all_eigenvalues = r.get_vector("fpca.all_eigenvalues", b);
  ck.fpca.explained = r.get_vector("fpca.explained", b);

  if (trained) {
    NsdeModel model;
    const auto dd = static_cast<Eigen::Index>(d);
    model.drift_net = RecurrentNet(dd, static_cast<Eigen::Index>(hidden), dd, static_cast<int>(layers));
    model.diff_net = RecurrentNet(dd, static_cast<Eigen::Index>(hidden), tril_size(dd), static_cast<int>(layers));
    model.lag = static_cast<Eigen::Index>(lag);
    model.dt = dt;
    model.eps = eps;
    model.norm_center = r.get_vector("norm.center", d);
    model.norm_scale = r.get_vector("norm.scale", d);
    model.drift_net.params() = r.get_vector("drift.params", static_cast<std::size_t>(model.drift_net.n_params()));
    model.diff_net.params() = r.get_vector("diff.params", static_cast<std::size_t>(model.diff_net.n_params()));
    model.validate();
    ck.model = std::move(model);
  }
  if (r.position() + 4 + 8 != bytes.size()) fail(ErrorKind::format, "checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace ivgen
