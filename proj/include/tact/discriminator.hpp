#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <vector>

#include "tact/buffer.hpp"
#include "tact/encoder.hpp"
#include "tact/errors.hpp"
#include "tact/neuralnet.hpp"
#include "tact/rng.hpp"

namespace tact {

// Classifier output over the object set.
struct Prediction {
  int label = 0;           // argmax of distribution; ties resolve to the lowest id
  double confidence = 0.0; // max probability
  std::vector<double> distribution;
};

struct DiscriminatorConfig {
  double confidence_threshold = 0.98;
  int epochs_per_iteration = 15;
  int batch_size = 64;
  double learning_rate = 1e-3;

  void validate() const {
    if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0)) {
      throw ConfigError("discriminator: confidence_threshold must be in (0, 1]");
    }
    if (epochs_per_iteration < 0) throw ConfigError("discriminator: epochs_per_iteration must be >= 0");
    if (batch_size < 1) throw ConfigError("discriminator: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("discriminator: learning_rate must be > 0");
  }
};

// Convolutional classifier topology shared by every learned grid reader.
// Dense width 0 means "infer from the flattened feature count".
inline std::vector<LayerSpec> classifier_specs(int num_classes, double dropout_p = 0.5) {
  return {
      LayerSpec::conv2d(16, 5, 2), LayerSpec::relu(),
      LayerSpec::conv2d(32, 3, 2), LayerSpec::relu(),
      LayerSpec::maxpool(2),       LayerSpec::dropout(dropout_p),
      LayerSpec::flatten(),        LayerSpec::dense(0, 128),
      LayerSpec::relu(),           LayerSpec::dense(128, num_classes),
  };
}

// CNN classifier over probed grids. A Discriminator owns its parameters,
// optimizer state, and epoch-shuffle RNG; copies are independent, so parallel
// readers each take a copy and share nothing.
template <typename T = float>
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(int num_classes, int grid_w, int grid_h, DiscriminatorConfig config,
                std::uint64_t seed)
      : config_(config),
        num_classes_(num_classes),
        net_(classifier_specs(num_classes), Shape3{1, grid_h, grid_w}, seed),
        shuffle_rng_(derive_seed(seed, 0x73687566666c65ULL)) {
    if (num_classes < 2) throw ConfigError("discriminator: need at least 2 classes");
    config_.validate();
    adam_ = Adam<T>(net_.params(), config_.learning_rate);
  }

  Discriminator(const Discriminator& other) { *this = other; }
  Discriminator& operator=(const Discriminator& other) {
    if (this == &other) return *this;
    config_ = other.config_;
    num_classes_ = other.num_classes_;
    net_ = other.net_;
    adam_ = other.adam_;
    adam_.rebind(net_.params());
    shuffle_rng_ = other.shuffle_rng_;
    state_ = {};
    train_state_ = {};
    input_ = {};
    return *this;
  }
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  const DiscriminatorConfig& config() const { return config_; }
  int num_classes() const { return num_classes_; }
  Net<T>& net() { return net_; }
  const Shape3& input_shape() const { return net_.input_shape(); }

  // `image` is the probe view (no finger marker): one scalar per cell in
  // {0, 0.5, 1}. The marker level 0.75 must not appear; its presence means the
  // caller handed over the explorer's view.
  Prediction predict(const T* image) const {
    std::vector<Prediction> out = predict_batch(image, 1);
    return out[0];
  }

  std::vector<Prediction> predict_batch(const T* images, int n) const {
    const Shape3& s = net_.input_shape();
    const std::size_t features = static_cast<std::size_t>(s.features());
    input_.resize(n, s.c, s.h, s.w);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * features; ++i) {
      const T v = images[i];
      if (v == static_cast<T>(kImageFinger)) {
        throw StateError("discriminator: input contains the finger marker level");
      }
      input_.data[i] = v - static_cast<T>(0.5);  // zero-center: unknown maps to 0
    }
    const Tensor<T>& logits = net_.forward(input_, state_, /*train=*/false);
    // Softmax in double so the reported distribution is a simplex point to
    // double precision regardless of the network's scalar type.
    std::vector<Prediction> out(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(num_classes_));
    for (int b = 0; b < n; ++b) {
      const T* row = logits.sample(b);
      double zmax = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < num_classes_; ++k) {
        z[static_cast<std::size_t>(k)] = static_cast<double>(row[k]);
        if (!std::isfinite(z[static_cast<std::size_t>(k)])) {
          throw NumericError("discriminator: non-finite logit");
        }
        zmax = std::max(zmax, z[static_cast<std::size_t>(k)]);
      }
      double sum = 0.0;
      for (double& v : z) sum += (v = std::exp(v - zmax));
      Prediction& pred = out[static_cast<std::size_t>(b)];
      pred.distribution.resize(static_cast<std::size_t>(num_classes_));
      int best = 0;
      for (int k = 0; k < num_classes_; ++k) {
        const double p = z[static_cast<std::size_t>(k)] / sum;
        pred.distribution[static_cast<std::size_t>(k)] = p;
        if (p > pred.distribution[static_cast<std::size_t>(best)]) best = k;  // ties keep the lowest id
      }
      pred.label = best;
      pred.confidence = pred.distribution[static_cast<std::size_t>(best)];
    }
    return out;
  }

  bool should_terminate(const Prediction& p) const {
    return p.confidence > config_.confidence_threshold;
  }

  // Runs `epochs` full passes over the buffer in a freshly shuffled order each
  // epoch, stepping the optimizer per minibatch. Returns the mean loss of each
  // epoch. epochs = 0 leaves the parameters untouched.
  std::vector<double> train_epochs(const DataBuffer& buffer, int epochs) {
    if (buffer.empty()) throw DataError("discriminator: training buffer is empty");
    if (epochs < 0) throw ConfigError("discriminator: epochs must be >= 0");
    const Shape3& s = net_.input_shape();
    const std::size_t features = static_cast<std::size_t>(s.features());
    std::vector<std::size_t> order(buffer.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<double> epoch_losses;
    Tensor<T> batch_in, dlogits;
    std::vector<int> labels;
    for (int e = 0; e < epochs; ++e) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng_.uniform_int(i)]);
      }
      double loss_sum = 0.0;
      std::size_t seen = 0;
      for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config_.batch_size)) {
        const int n = static_cast<int>(
            std::min<std::size_t>(config_.batch_size, order.size() - at));
        batch_in.resize(n, s.c, s.h, s.w);
        labels.resize(static_cast<std::size_t>(n));
        for (int b = 0; b < n; ++b) {
          const LabeledSample& sample = buffer[order[at + static_cast<std::size_t>(b)]];
          if (sample.cells.size() != features) {
            throw DataError("discriminator: sample size does not match input shape");
          }
          if (sample.label < 0 || sample.label >= num_classes_) {
            throw DataError("discriminator: sample label out of range");
          }
          T* dst = batch_in.sample(b);
          for (std::size_t j = 0; j < features; ++j) {
            dst[j] = cell_level(sample.cells[j]) - static_cast<T>(0.5);
          }
          labels[static_cast<std::size_t>(b)] = sample.label;
        }
        const Tensor<T>& logits = net_.forward(batch_in, train_state_, /*train=*/true);
        const T loss = softmax_cross_entropy<T>(logits, labels, nullptr, &dlogits);
        net_.backward(train_state_, dlogits);
        adam_.step();
        loss_sum += static_cast<double>(loss) * n;
        seen += static_cast<std::size_t>(n);
      }
      epoch_losses.push_back(loss_sum / static_cast<double>(seen));
    }
    return epoch_losses;
  }

  // Share of buffer samples whose eval-mode argmax matches the stored label.
  double accuracy(const DataBuffer& buffer) const {
    if (buffer.empty()) throw DataError("discriminator: accuracy over an empty buffer");
    const Shape3& s = net_.input_shape();
    const std::size_t features = static_cast<std::size_t>(s.features());
    constexpr int kChunk = 256;
    std::vector<T> images;
    std::size_t correct = 0;
    for (std::size_t at = 0; at < buffer.size(); at += kChunk) {
      const int n = static_cast<int>(std::min<std::size_t>(kChunk, buffer.size() - at));
      images.assign(static_cast<std::size_t>(n) * features, T(0));
      for (int b = 0; b < n; ++b) {
        const LabeledSample& sample = buffer[at + static_cast<std::size_t>(b)];
        if (sample.cells.size() != features) {
          throw DataError("discriminator: sample size does not match input shape");
        }
        for (std::size_t j = 0; j < features; ++j) {
          images[static_cast<std::size_t>(b) * features + j] = cell_level(sample.cells[j]);
        }
      }
      const std::vector<Prediction> preds = predict_batch(images.data(), n);
      for (int b = 0; b < n; ++b) {
        if (preds[static_cast<std::size_t>(b)].label ==
            buffer[at + static_cast<std::size_t>(b)].label) {
          ++correct;
        }
      }
    }
    return static_cast<double>(correct) / static_cast<double>(buffer.size());
  }

  void save(std::ostream& os) {
    save_net(net_, os);
    adam_.save(os);
    detail::write_string(os, shuffle_rng_.serialize());
    if (!os) throw DataError("discriminator: checkpoint write failed");
  }

  static Discriminator load(std::istream& is, DiscriminatorConfig config) {
    Discriminator d;
    d.config_ = config;
    d.config_.validate();
    d.net_ = load_net<T>(is);
    const LayerSpec& last = d.net_.specs().back();
    if (last.kind != LayerSpec::Kind::Dense) throw DataError("discriminator: unexpected topology");
    d.num_classes_ = last.out;
    d.adam_ = Adam<T>(d.net_.params(), config.learning_rate);
    d.adam_.load(is);
    d.shuffle_rng_.deserialize(detail::read_string(is));
    return d;
  }

 private:
  static T cell_level(CellState c) {
    switch (c) {
      case CellState::Free: return static_cast<T>(kImageFree);
      case CellState::Contact: return static_cast<T>(kImageContact);
      default: return static_cast<T>(kImageUnknown);
    }
  }

  DiscriminatorConfig config_;
  int num_classes_ = 0;
  Net<T> net_;
  Adam<T> adam_;
  Rng shuffle_rng_{0};
  mutable NetState<T> state_;        // inference scratch
  NetState<T> train_state_;
  mutable Tensor<T> input_;
};

}  // namespace tact
