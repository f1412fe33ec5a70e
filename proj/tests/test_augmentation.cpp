#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <numbers>

#include "doctest.h"
#include "posefree/augmentation.hpp"
#include "posefree/synthetic_data.hpp"

using namespace posefree;

namespace {

constexpr int kRes = 16;

PriorScene box_prior() {
  PriorScene p;
  p.object_id = "box";
  p.scene = generate_scene(21);
  p.reference_pose = make_orbit_pose(2.0, 0.9, 0.1);
  p.samples_per_ray = 24;
  return p;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

}  // namespace

TEST_CASE("timestep schedule hits its reference points") {
  const std::int64_t total = 12000;
  CHECK(timestep_schedule(0, total, 1000) == 1000);
  CHECK(timestep_schedule(total / 2, total, 1000) == 500);
  CHECK(timestep_schedule(total, total, 1000) == 200);
  CHECK(timestep_schedule(total * 9 / 10, total, 1000) == 200);
  CHECK(timestep_schedule(total / 4, total, 1000, 0.5) == 750);
  for (std::int64_t s = 1; s <= total; s += 257) CHECK(timestep_schedule(s, total, 1000) <= timestep_schedule(s - 1, total, 1000));
  CHECK_THROWS_AS(timestep_schedule(-1, total, 1000), std::invalid_argument);
  CHECK_THROWS_AS(timestep_schedule(total + 1, total, 1000), std::invalid_argument);
  CHECK_THROWS_AS(timestep_schedule(0, 0, 1000), std::invalid_argument);
}

TEST_CASE("beta schedule hits its reference points") {
  CHECK(beta_schedule(0, 100) == 1.0);
  CHECK(beta_schedule(50, 100) == doctest::Approx(12500.5));
  CHECK(beta_schedule(100, 100) == 25000.0);
  CHECK(beta_schedule(25, 100, 2.0, 6.0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(beta_schedule(101, 100), std::invalid_argument);
}

TEST_CASE("generation sizes grow linearly") {
  AugmentationSchedule aug;
  CHECK(aug.views_in_generation(0) == 6);
  CHECK(aug.views_in_generation(1) == 11);
  CHECK(aug.views_in_generation(2) == 16);
  CHECK(aug.total_after(0) == 6);
  CHECK(aug.total_after(1) == 17);
  CHECK(aug.total_after(2) == 33);
  aug.replace = true;
  CHECK(aug.total_after(2) == 16);
  CHECK_THROWS_AS(aug.views_in_generation(-1), std::invalid_argument);
}

TEST_CASE("schedule validation rejects bad fields") {
  AugmentationSchedule aug;
  CHECK_NOTHROW(aug.validate());
  auto bad = aug;
  bad.k0 = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = aug;
  bad.interval_steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = aug;
  bad.t_floor_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = aug;
  bad.k_increment = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("denoising stride count follows the start timestep") {
  CHECK(denoising_steps_for(1000) == 20);
  CHECK(denoising_steps_for(200) == 4);
  CHECK(denoising_steps_for(49) == 1);
  CHECK(denoising_steps_for(1) == 1);
}

TEST_CASE("pseudo-view set appends or replaces whole generations") {
  PseudoViewSet set;
  auto batch = [](int n, int g) {
    std::vector<PseudoView> out(n);
    for (auto& v : out) v.generation = g;
    return out;
  };
  set.append(batch(6, 0), false);
  set.append(batch(11, 1), false);
  CHECK(set.size() == 17);
  CHECK(set.generations == 2);
  set.append(batch(16, 2), true);
  CHECK(set.size() == 16);
  CHECK(set.generations == 3);
  for (const auto& v : set.views) CHECK(v.generation == 2);
}

TEST_CASE("oracle pseudo-views equal the true views on the equator") {
  const NoiseSchedule sched = NoiseSchedule::cosine();
  const OracleDenoiser den(box_prior(), sched);
  AugmentationSchedule aug;
  // The model render is deliberately wrong; the oracle ignores it.
  const ViewRenderer model = [](const OrbitPose&) { return Image(kRes, kRes, 0.25); };
  const Image ref = den.ground_truth(make_orbit_pose(2.0, 0.0, 0.0), kRes);
  Rng rng(1);
  for (int g : {0, 1, 2}) {
    const std::int64_t s = g * 400;
    const auto views = synthesize_pseudo_views(model, ref, den, sched, aug, s, 1200, g, 2.0, rng);
    REQUIRE(static_cast<int>(views.size()) == aug.views_in_generation(g));
    const int k = static_cast<int>(views.size());
    for (int i = 0; i < k; ++i) {
      const auto& v = views[i];
      CHECK(v.pose.radius == 2.0);
      CHECK(v.pose.polar == 0.0);
      CHECK(v.pose.azimuth == doctest::Approx(wrap_angle(2.0 * std::numbers::pi * (i + 1) / k)));
      CHECK(v.generation == g);
      CHECK(v.created_at_step == s);
      CHECK(v.t_start_used == timestep_schedule(s, 1200, 1000));
      CHECK(max_abs_diff(v.image, den.ground_truth(v.pose, kRes)) < 1e-9);
    }
  }
}

TEST_CASE("pseudo-view polar offsets stay inside theta") {
  const NoiseSchedule sched = NoiseSchedule::cosine();
  const OracleDenoiser den(box_prior(), sched);
  AugmentationSchedule aug;
  aug.theta_aug = 0.1;
  aug.k0 = 12;
  const ViewRenderer model = [](const OrbitPose&) { return Image(8, 8, 0.5); };
  Rng rng(2);
  const auto views = synthesize_pseudo_views(model, Image(8, 8), den, sched, aug, 0, 10, 0, 2.0, rng);
  bool any_off_equator = false;
  for (const auto& v : views) {
    CHECK(std::abs(v.pose.polar) <= 0.1);
    any_off_equator |= v.pose.polar != 0.0;
  }
  CHECK(any_off_equator);
}

TEST_CASE("pseudo-view dump writes images and pose records") {
  const auto dir = std::filesystem::temp_directory_path() / "posefree_test_pseudo_dump";
  std::filesystem::remove_all(dir);
  std::vector<PseudoView> views(3);
  for (int i = 0; i < 3; ++i) views[i] = PseudoView{Image(4, 4, 0.1 * i), make_orbit_pose(2.0, i, 0.0), 40, 600, 1};
  dump_pseudo_views(dir, views);
  CHECK(std::filesystem::exists(dir / "gen_1" / "002.png"));
  const auto records = nlohmann::json::parse(read_text_file(dir / "gen_1" / "views.json"));
  REQUIRE(records.size() == 3);
  CHECK(records[2]["t_start"] == 600);
  CHECK(records[1]["pose"]["azimuth_rad"].get<double>() == doctest::Approx(1.0));
  std::filesystem::remove_all(dir);
}
