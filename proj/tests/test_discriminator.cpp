#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "tact/buffer.hpp"
#include "tact/discriminator.hpp"
#include "tact/geometry.hpp"
#include "tact/rng.hpp"

using namespace tact;

namespace {

LabeledSample sample_from_truth(const TruthGrid& truth, int label) {
  LabeledSample s;
  s.label = label;
  s.cells.resize(truth.occupied.size());
  for (std::size_t i = 0; i < truth.occupied.size(); ++i) {
    s.cells[i] = truth.occupied[i] ? CellState::Contact : CellState::Free;
  }
  return s;
}

LabeledSample random_partial_sample(int w, int h, int label, Rng& rng) {
  LabeledSample s;
  s.label = label;
  s.cells.resize(static_cast<std::size_t>(w) * h, CellState::Unknown);
  const int probes = 20 + static_cast<int>(rng.uniform_int(60));
  for (int i = 0; i < probes; ++i) {
    const std::size_t at = rng.uniform_int(s.cells.size());
    s.cells[at] = rng.bernoulli(0.3) ? CellState::Contact : CellState::Free;
  }
  return s;
}

std::vector<float> unexplored_image(int w, int h) {
  return std::vector<float>(static_cast<std::size_t>(w) * h, static_cast<float>(kImageUnknown));
}

}  // namespace

TEST_CASE("buffer holds pushes in order until capacity") {
  DataBuffer buf(8);
  REQUIRE(buf.empty());
  REQUIRE(buf.capacity() == 8);
  for (int i = 0; i < 5; ++i) buf.push(LabeledSample{{}, i});
  REQUIRE(buf.size() == 5);
  REQUIRE(buf.total_pushes() == 5);
  for (int i = 0; i < 5; ++i) REQUIRE(buf[static_cast<std::size_t>(i)].label == i);
}

TEST_CASE("buffer evicts the oldest sample once full") {
  DataBuffer buf(3);
  for (int i = 1; i <= 4; ++i) buf.push(LabeledSample{{}, i});
  REQUIRE(buf.size() == 3);
  REQUIRE(buf.total_pushes() == 4);
  REQUIRE(buf[0].label == 2);
  REQUIRE(buf[1].label == 3);
  REQUIRE(buf[2].label == 4);

  for (int i = 5; i <= 103; ++i) buf.push(LabeledSample{{}, i});
  REQUIRE(buf.size() == 3);
  REQUIRE(buf.total_pushes() == 103);
  REQUIRE(buf[0].label == 101);
  REQUIRE(buf[1].label == 102);
  REQUIRE(buf[2].label == 103);
}

TEST_CASE("buffer rejects bad capacity and bad indices") {
  REQUIRE_THROWS_AS(DataBuffer(0), ConfigError);
  DataBuffer buf(2);
  buf.push(LabeledSample{{}, 0});
  REQUIRE_THROWS_AS(buf[1], DataError);
}

TEST_CASE("buffer label histogram counts current contents") {
  DataBuffer buf(4);
  for (int label : {0, 1, 1, 2, 2}) buf.push(LabeledSample{{}, label});
  const auto counts = buf.label_histogram(3);
  REQUIRE(counts[0] == 0);  // evicted
  REQUIRE(counts[1] == 2);
  REQUIRE(counts[2] == 2);
}

TEST_CASE("prediction distribution is a simplex point") {
  Discriminator<float> d(10, 60, 60, {}, 99);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const LabeledSample s = random_partial_sample(60, 60, 0, rng);
    std::vector<float> image(s.cells.size());
    for (std::size_t i = 0; i < s.cells.size(); ++i) {
      image[i] = s.cells[i] == CellState::Contact  ? static_cast<float>(kImageContact)
                 : s.cells[i] == CellState::Free   ? static_cast<float>(kImageFree)
                                                   : static_cast<float>(kImageUnknown);
    }
    const Prediction p = d.predict(image.data());
    double sum = 0.0;
    for (double v : p.distribution) {
      REQUIRE(v >= 0.0);
      sum += v;
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-9);
    REQUIRE(p.confidence == Catch::Approx(p.distribution[static_cast<std::size_t>(p.label)]));
    for (double v : p.distribution) REQUIRE(v <= p.confidence);
  }
}

TEST_CASE("zero final layer yields the uniform distribution") {
  Discriminator<float> d(10, 60, 60, {}, 7);
  auto params = d.net().params();
  // Final dense layer owns the last two parameter arrays (weights, bias).
  for (std::size_t i = params.size() - 2; i < params.size(); ++i) {
    std::fill(params[i].value->begin(), params[i].value->end(), 0.0f);
  }
  const auto image = unexplored_image(60, 60);
  const Prediction p = d.predict(image.data());
  REQUIRE(p.label == 0);  // tie resolves to the lowest id
  REQUIRE(p.confidence == Catch::Approx(0.1).margin(1e-7));
  for (double v : p.distribution) REQUIRE(v == Catch::Approx(0.1).margin(1e-7));
  REQUIRE_FALSE(d.should_terminate(p));
}

TEST_CASE("finger marker in the input is rejected") {
  Discriminator<float> d(4, 12, 12, {}, 3);
  auto image = unexplored_image(12, 12);
  image[60] = static_cast<float>(kImageFinger);
  REQUIRE_THROWS_AS(d.predict(image.data()), StateError);
}

TEST_CASE("termination threshold is strict") {
  DiscriminatorConfig cfg;
  cfg.confidence_threshold = 0.98;
  Discriminator<float> d(4, 12, 12, cfg, 3);
  Prediction p;
  p.confidence = 0.99;
  REQUIRE(d.should_terminate(p));
  p.confidence = 0.98;
  REQUIRE_FALSE(d.should_terminate(p));

  cfg.confidence_threshold = 1.0;
  Discriminator<float> never(4, 12, 12, cfg, 3);
  p.confidence = 1.0;
  REQUIRE_FALSE(never.should_terminate(p));
}

TEST_CASE("config validation") {
  DiscriminatorConfig cfg;
  cfg.confidence_threshold = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg.confidence_threshold = 1.2;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  REQUIRE_THROWS_AS(Discriminator<float>(1, 12, 12, {}, 0), ConfigError);
}

TEST_CASE("zero training epochs leave parameters untouched") {
  Discriminator<float> d(4, 20, 20, {}, 11);
  Discriminator<float> before = d;
  DataBuffer buf(8);
  Rng rng(2);
  for (int i = 0; i < 8; ++i) buf.push(random_partial_sample(20, 20, i % 4, rng));
  const auto losses = d.train_epochs(buf, 0);
  REQUIRE(losses.empty());
  REQUIRE(bitwise_equal(d.net(), before.net()));
}

TEST_CASE("training an empty buffer is an error") {
  Discriminator<float> d(4, 20, 20, {}, 11);
  DataBuffer buf(8);
  REQUIRE_THROWS_AS(d.train_epochs(buf, 1), DataError);
  REQUIRE_THROWS_AS(d.accuracy(buf), DataError);
}

TEST_CASE("prediction does not mutate parameters") {
  Discriminator<float> d(10, 60, 60, {}, 21);
  Discriminator<float> before = d;
  const auto image = unexplored_image(60, 60);
  (void)d.predict(image.data());
  REQUIRE(bitwise_equal(d.net(), before.net()));
}

TEST_CASE("a single repeated sample is memorized within fifteen epochs") {
  Discriminator<float> d(10, 60, 60, {}, 31);
  Rng rng(17);
  DataBuffer buf(4);
  LabeledSample s = random_partial_sample(60, 60, 3, rng);
  buf.push(s);

  const auto losses = d.train_epochs(buf, 15);
  REQUIRE(losses.size() == 15);

  std::vector<float> image(s.cells.size());
  for (std::size_t i = 0; i < s.cells.size(); ++i) {
    image[i] = s.cells[i] == CellState::Contact  ? static_cast<float>(kImageContact)
               : s.cells[i] == CellState::Free   ? static_cast<float>(kImageFree)
                                                 : static_cast<float>(kImageUnknown);
  }
  const Prediction p = d.predict(image.data());
  REQUIRE(p.label == 3);
  REQUIRE(p.confidence > 0.98);
}

TEST_CASE("fully revealed grids from ten objects are separable") {
  const GridSpec spec{60, 60, 0.005};
  Rng gen(404);
  DataBuffer buf(200);
  std::vector<TruthGrid> truths;
  for (int id = 0; id < 10; ++id) {
    const Polygon poly = generate_polygon(gen, 8, 0.10);
    truths.push_back(rasterize_truth(poly, Pose2D{}, spec));
  }
  for (int copy = 0; copy < 20; ++copy) {
    for (int id = 0; id < 10; ++id) buf.push(sample_from_truth(truths[static_cast<std::size_t>(id)], id));
  }

  Discriminator<float> d(10, 60, 60, {}, 77);
  const auto losses = d.train_epochs(buf, 15);
  REQUIRE(losses.size() == 15);
  REQUIRE(losses.back() < losses.front());
  REQUIRE(d.accuracy(buf) >= 0.95);
}

TEST_CASE("conflicting labels on one grid train toward the label frequency") {
  Rng rng(9);
  const LabeledSample base = random_partial_sample(20, 20, 2, rng);
  DataBuffer buf(32);
  for (int i = 0; i < 16; ++i) {
    LabeledSample a = base;
    a.label = 2;
    buf.push(a);
    LabeledSample b = base;
    b.label = 7;
    buf.push(b);
  }
  DiscriminatorConfig cfg;
  cfg.batch_size = 32;
  Discriminator<float> d(10, 20, 20, cfg, 55);
  d.train_epochs(buf, 300);

  std::vector<float> image(base.cells.size());
  for (std::size_t i = 0; i < base.cells.size(); ++i) {
    image[i] = base.cells[i] == CellState::Contact  ? static_cast<float>(kImageContact)
               : base.cells[i] == CellState::Free   ? static_cast<float>(kImageFree)
                                                    : static_cast<float>(kImageUnknown);
  }
  const Prediction p = d.predict(image.data());
  REQUIRE(std::abs(p.distribution[2] - 0.5) < 0.1);
  REQUIRE(std::abs(p.distribution[7] - 0.5) < 0.1);
  REQUIRE_FALSE(d.should_terminate(p));
}

TEST_CASE("loss is non-increasing early in training for most seeds") {
  const GridSpec spec{20, 20, 0.005};
  Rng gen(1234);
  DataBuffer buf(40);
  std::vector<TruthGrid> truths;
  for (int id = 0; id < 4; ++id) {
    truths.push_back(rasterize_truth(generate_polygon(gen, 8, 0.03), Pose2D{}, spec));
  }
  for (int copy = 0; copy < 10; ++copy) {
    for (int id = 0; id < 4; ++id) buf.push(sample_from_truth(truths[static_cast<std::size_t>(id)], id));
  }

  int ok = 0;
  const int runs = 20;
  DiscriminatorConfig cfg;
  cfg.batch_size = 8;
  for (int seed = 0; seed < runs; ++seed) {
    Discriminator<float> d(4, 20, 20, cfg, 1000 + static_cast<std::uint64_t>(seed));
    const auto losses = d.train_epochs(buf, 3);
    if (losses[0] >= losses[1] && losses[1] >= losses[2]) ++ok;
  }
  REQUIRE(ok >= 18);
}

TEST_CASE("checkpoint round-trip restores training behavior exactly") {
  Rng rng(88);
  DataBuffer buf(24);
  for (int i = 0; i < 24; ++i) buf.push(random_partial_sample(20, 20, i % 3, rng));

  DiscriminatorConfig cfg;
  Discriminator<float> d(3, 20, 20, cfg, 66);
  d.train_epochs(buf, 2);

  std::stringstream ss;
  d.save(ss);
  Discriminator<float> restored = Discriminator<float>::load(ss, cfg);
  REQUIRE(restored.num_classes() == 3);
  REQUIRE(bitwise_equal(d.net(), restored.net()));

  const auto image = unexplored_image(20, 20);
  const Prediction pa = d.predict(image.data());
  const Prediction pb = restored.predict(image.data());
  REQUIRE(pa.label == pb.label);
  REQUIRE(pa.distribution == pb.distribution);

  const auto la = d.train_epochs(buf, 2);
  const auto lb = restored.train_epochs(buf, 2);
  REQUIRE(la == lb);
  REQUIRE(bitwise_equal(d.net(), restored.net()));
}

TEST_CASE("copies train independently") {
  Rng rng(3);
  DataBuffer buf(8);
  for (int i = 0; i < 8; ++i) buf.push(random_partial_sample(12, 12, i % 2, rng));
  Discriminator<float> a(2, 12, 12, {}, 1);
  Discriminator<float> b = a;
  b.train_epochs(buf, 1);
  REQUIRE_FALSE(bitwise_equal(a.net(), b.net()));
  Discriminator<float> c = a;
  (void)c;
  a.train_epochs(buf, 1);  // must update a's own parameters, not c's
  REQUIRE_FALSE(bitwise_equal(a.net(), c.net()));
}
