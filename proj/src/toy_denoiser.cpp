#include "posefree/toy_denoiser.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>

#include "posefree/ops.hpp"
#include "posefree/trainer.hpp"

namespace posefree {

namespace {

ad::Tensor conv_weight(int out, int in, double gain, Rng& rng) {
  return ad::Tensor::from_data(rng.normal_vector(static_cast<std::size_t>(out) * in * 9, gain * std::sqrt(2.0 / (9.0 * in))),
                               {out, in, 3, 3}, true);
}

// Layer table: (out, in) per convolution.
std::vector<std::pair<int, int>> layer_shapes(int c) {
  return {{c, ToyDenoiser::kInputChannels}, {2 * c, c}, {2 * c, 2 * c}, {c, 2 * c}, {c, 2 * c}, {3, c}};
}

}  // namespace

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig cfg, NoiseSchedule sched, Rng& rng) : cfg_(cfg), sched_(std::move(sched)) {
  if (cfg_.resolution < 2 || cfg_.resolution % 2 != 0) throw std::invalid_argument("toy denoiser: resolution must be even");
  if (cfg_.base_channels < 1) throw std::invalid_argument("toy denoiser: base_channels must be >= 1");
  const auto shapes = layer_shapes(cfg_.base_channels);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const double gain = l + 1 == shapes.size() ? 0.1 : 1.0;
    weights_.push_back(conv_weight(shapes[l].first, shapes[l].second, gain, rng));
    biases_.push_back(ad::Tensor::zeros({shapes[l].first}, true));
  }
  // Start from the grey mean so early estimates are not saturated.
  for (double& b : biases_.back().mutable_values()) b = 0.5;
}

std::vector<ad::Tensor> ToyDenoiser::parameters() const {
  std::vector<ad::Tensor> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

ad::Tensor ToyDenoiser::predict_clean(const Image& x_t, int t, const Image& ref, const OrbitPose& rel_pose) const {
  const int r = cfg_.resolution;
  if (x_t.height != r || x_t.width != r || !ref.same_shape(x_t))
    throw std::invalid_argument("toy denoiser: expected " + std::to_string(r) + "x" + std::to_string(r) + " images");
  const double ab = sched_.alpha_bar(t);
  const std::size_t hw = static_cast<std::size_t>(r) * r;
  std::vector<double> in(hw * kInputChannels);
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) {
      in[c * hw + p] = x_t.pixels[p * 3 + c];
      in[(3 + c) * hw + p] = ref.pixels[p * 3 + c];
    }
  const double maps[5] = {std::sin(rel_pose.azimuth), std::cos(rel_pose.azimuth), 4.0 * rel_pose.polar, std::sqrt(ab),
                          std::sqrt(1.0 - ab)};
  for (int m = 0; m < 5; ++m) std::fill_n(in.begin() + static_cast<std::ptrdiff_t>((6 + m) * hw), hw, maps[m]);
  const ad::Tensor x = ad::Tensor::from_data(std::move(in), {kInputChannels, r, r});

  auto block = [&](const ad::Tensor& v, int l, int stride) {
    return ad::leaky_relu(ad::conv2d(v, weights_[l], biases_[l], stride, 1), 0.2);
  };
  const ad::Tensor e1 = block(x, 0, 1);
  const ad::Tensor e2 = block(e1, 1, 2);
  const ad::Tensor mid = block(e2, 2, 1);
  const ad::Tensor up = block(ad::upsample_nearest2x(mid), 3, 1);
  const ad::Tensor dec = block(ad::concat_channels({up, e1}), 4, 1);
  const ad::Tensor out = ad::conv2d(dec, weights_[5], biases_[5], 1, 1);
  return ad::chw_to_hwc(out);
}

Image ToyDenoiser::predict_noise(const Image& x_t, int t, const Image& ref, const OrbitPose& rel_pose) const {
  const double ab = sched_.alpha_bar(t);
  Image eps(x_t.height, x_t.width);
  if (t == 0) return eps;
  Image x0;
  {
    ad::NoGradGuard guard;
    x0 = Image::from_tensor(predict_clean(x_t, t, ref, rel_pose), x_t.height, x_t.width);
  }
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < eps.size(); ++i) eps.pixels[i] = (x_t.pixels[i] - sa * x0.pixels[i]) / sb;
  return eps;
}

void ToyDenoiser::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "toy_denoiser_v1";
  j["resolution"] = cfg_.resolution;
  j["base_channels"] = cfg_.base_channels;
  j["alpha_bar"] = sched_.table();
  j["parameters"] = nlohmann::json::array();
  for (const auto& p : parameters()) j["parameters"].push_back(p.vector());
  const std::string text = j.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

ToyDenoiser ToyDenoiser::load(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_text_file(path));
  if (j.value("format", "") != "toy_denoiser_v1") throw std::invalid_argument("toy denoiser: bad file " + path.string());
  Rng rng(0);
  ToyDenoiser den(ToyDenoiserConfig{j.at("resolution"), j.at("base_channels")},
                  NoiseSchedule(j.at("alpha_bar").get<std::vector<double>>()), rng);
  const auto params = den.parameters();
  const auto& stored = j.at("parameters");
  if (stored.size() != params.size()) throw std::invalid_argument("toy denoiser: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto v = stored[i].get<std::vector<double>>();
    auto p = params[i];
    if (v.size() != p.vector().size()) throw std::invalid_argument("toy denoiser: parameter size mismatch");
    std::copy(v.begin(), v.end(), p.mutable_values().begin());
  }
  return den;
}

double train_toy_denoiser(ToyDenoiser& den, const std::vector<PriorScene>& scenes, const ToyTrainOptions& opt) {
  if (scenes.empty()) throw std::invalid_argument("train_toy_denoiser: no scenes");
  if (opt.steps < 0 || opt.batch < 1 || opt.bank_views < 1)
    throw std::invalid_argument("train_toy_denoiser: steps >= 0, batch >= 1 and bank_views >= 1 required");
  const int r = den.config().resolution;
  const NoiseSchedule& sched = den.schedule();
  Rng rng(opt.seed);

  struct Bank {
    Image ref;
    std::vector<OrbitPose> poses;
    std::vector<Image> views;
  };
  std::vector<Bank> banks;
  for (const auto& scene : scenes) {
    const OracleDenoiser oracle(scene, sched, opt.orbit_radius);
    Bank b;
    b.ref = oracle.ground_truth(make_orbit_pose(opt.orbit_radius, 0.0, scene.reference_pose.polar), r);
    for (int i = 0; i < opt.bank_views; ++i) {
      const double az = 2.0 * std::numbers::pi * i / opt.bank_views;
      const OrbitPose pose = make_orbit_pose(opt.orbit_radius, az, rng.uniform(-opt.polar_range, opt.polar_range));
      b.poses.push_back(pose);
      b.views.push_back(oracle.ground_truth(pose, r));
    }
    banks.push_back(std::move(b));
  }

  AdamState adam;
  auto params = den.parameters();
  double last = 0.0;
  for (int step = 0; step < opt.steps; ++step) {
    for (auto& p : params) p.zero_grad();
    double loss = 0.0;
    for (int i = 0; i < opt.batch; ++i) {
      const auto& b = banks[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(banks.size()) - 1))];
      const auto v = static_cast<std::size_t>(rng.uniform_int(0, opt.bank_views - 1));
      const int t = static_cast<int>(rng.uniform_int(1, sched.t_max()));
      const Image x_t = add_noise(b.views[v], t, gaussian_image(r, r, rng), sched);
      const ad::Tensor l = ad::mse(den.predict_clean(x_t, t, b.ref, b.poses[v]), b.views[v].to_tensor());
      loss += l.item() / opt.batch;
      ad::weighted_sum({l}, {1.0 / opt.batch}).backward();
    }
    const double progress = static_cast<double>(step) / std::max(1, opt.steps);
    adam.step(params, opt.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    last = step == 0 ? loss : 0.98 * last + 0.02 * loss;
  }
  return last;
}

}  // namespace posefree
