#include "posefree/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "posefree/config.hpp"

namespace posefree {

namespace {

constexpr char kMagic[] = "PFCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

class Blob {
 public:
  std::uint64_t put(std::span<const double> v) {
    const std::uint64_t at = data_.size();
    data_.insert(data_.end(), v.begin(), v.end());
    return at;
  }
  const std::vector<double>& data() const { return data_; }

 private:
  std::vector<double> data_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error("checkpoint: " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  using Json = nlohmann::ordered_json;
  Blob blob;
  Json tensors = Json::array();
  for (const auto& [name, t] : state.model.named_state())
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.put(t.values())}, {"size", t.numel()}});
  Json moments = Json::array();
  for (std::size_t i = 0; i < state.optimizer.m.size(); ++i)
    moments.push_back({{"m", blob.put(state.optimizer.m[i])},
                       {"v", blob.put(state.optimizer.v[i])},
                       {"size", state.optimizer.m[i].size()}});
  Json pseudo = Json::array();
  for (const auto& set : state.pseudo) {
    Json views = Json::array();
    for (const auto& v : set.views) {
      nlohmann::json pose = v.pose;
      views.push_back({{"pose", Json::parse(pose.dump())},
                       {"created_at_step", v.created_at_step},
                       {"t_start_used", v.t_start_used},
                       {"generation", v.generation},
                       {"height", v.image.height},
                       {"width", v.image.width},
                       {"offset", blob.put(v.image.pixels)}});
    }
    pseudo.push_back({{"generations", set.generations}, {"views", views}});
  }
  Json history = Json::array();
  for (const auto& r : state.history) history.push_back(Json::parse(metric_json_line(r)));

  Json header;
  header["config"] = train_config_to_json(state.config);
  header["step"] = state.step;
  header["rng"] = state.rng.state();
  header["adam"] = {{"beta1", state.optimizer.beta1},
                    {"beta2", state.optimizer.beta2},
                    {"eps", state.optimizer.eps},
                    {"t", state.optimizer.t},
                    {"moments", moments}};
  header["tensors"] = tensors;
  header["pseudo"] = pseudo;
  header["history"] = history;
  const std::string text = header.dump();

  std::vector<char> bytes(kMagic, kMagic + kMagicLen);
  const std::uint64_t len = text.size();
  const char* lp = reinterpret_cast<const char*>(&len);
  bytes.insert(bytes.end(), lp, lp + sizeof(len));
  bytes.insert(bytes.end(), text.begin(), text.end());
  const char* bp = reinterpret_cast<const char*>(blob.data().data());
  bytes.insert(bytes.end(), bp, bp + blob.data().size() * sizeof(double));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, bytes);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("checkpoint: cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= kMagicLen + 8 && std::memcmp(bytes.data(), kMagic, kMagicLen) == 0,
          path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + kMagicLen, sizeof(len));
  const std::size_t blob_at = kMagicLen + sizeof(len) + len;
  require(blob_at <= bytes.size() && (bytes.size() - blob_at) % sizeof(double) == 0, "truncated file");
  const auto header = nlohmann::json::parse(bytes.begin() + kMagicLen + sizeof(len), bytes.begin() + blob_at);
  std::vector<double> blob((bytes.size() - blob_at) / sizeof(double));
  std::memcpy(blob.data(), bytes.data() + blob_at, blob.size() * sizeof(double));
  auto slice = [&](std::uint64_t offset, std::uint64_t size) {
    require(offset + size <= blob.size(), "blob reference out of range");
    return std::span<const double>(blob.data() + offset, size);
  };

  const TrainConfig cfg = train_config_from_json(header.at("config"));
  TrainState st = init_train_state(cfg, header.at("pseudo").size());
  st.step = header.at("step").get<std::int64_t>();
  st.rng.restore(header.at("rng").get<std::string>());

  const auto named = st.model.named_state();
  const auto& tensors = header.at("tensors");
  require(tensors.size() == named.size(), "tensor count does not match the model preset");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& rec = tensors[i];
    auto t = named[i].second;
    require(rec.at("name").get<std::string>() == named[i].first, "tensor name mismatch at " + named[i].first);
    require(rec.at("shape").get<ad::Shape>() == t.shape(), "shape mismatch for " + named[i].first);
    const auto src = slice(rec.at("offset"), rec.at("size"));
    std::copy(src.begin(), src.end(), t.mutable_values().begin());
  }

  const auto& adam = header.at("adam");
  st.optimizer.beta1 = adam.at("beta1");
  st.optimizer.beta2 = adam.at("beta2");
  st.optimizer.eps = adam.at("eps");
  st.optimizer.t = adam.at("t");
  for (const auto& mo : adam.at("moments")) {
    const auto m = slice(mo.at("m"), mo.at("size"));
    const auto v = slice(mo.at("v"), mo.at("size"));
    st.optimizer.m.emplace_back(m.begin(), m.end());
    st.optimizer.v.emplace_back(v.begin(), v.end());
  }

  const auto& pseudo = header.at("pseudo");
  for (std::size_t o = 0; o < pseudo.size(); ++o) {
    auto& set = st.pseudo[o];
    set.generations = pseudo[o].at("generations");
    for (const auto& v : pseudo[o].at("views")) {
      PseudoView pv;
      pv.pose = v.at("pose").get<OrbitPose>();
      pv.created_at_step = v.at("created_at_step");
      pv.t_start_used = v.at("t_start_used");
      pv.generation = v.at("generation");
      pv.image = Image(v.at("height"), v.at("width"));
      const auto px = slice(v.at("offset"), pv.image.size());
      std::copy(px.begin(), px.end(), pv.image.pixels.begin());
      set.views.push_back(std::move(pv));
    }
  }

  for (const auto& h : header.at("history")) {
    MetricRecord r;
    r.step = h.at("step");
    r.loss_mse = h.at("loss_mse");
    r.loss_perc = h.at("loss_perc");
    r.sds_grad_norm = h.at("sds_grad_norm");
    r.beta = h.at("beta");
    r.lr = h.at("lr");
    if (h.contains("psnr_holdout")) r.psnr_holdout = h.at("psnr_holdout").get<double>();
    st.history.push_back(r);
  }
  return st;
}

}  // namespace posefree
