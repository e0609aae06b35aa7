#pragma once

// Supervised training of the victim classifier.

#include <numeric>
#include <string>
#include <vector>

#include "duet/data.hpp"
#include "duet/losses.hpp"
#include "duet/nets.hpp"

namespace duet {

class AccuracyFloorError : public std::runtime_error {
 public:
  AccuracyFloorError(double measured, double floor)
      : std::runtime_error("target test accuracy " + std::to_string(measured) + " is below the floor " +
                           std::to_string(floor)),
        measured(measured) {}
  double measured;
};

struct TargetConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double accuracy_floor = 0.9;

  void validate() const {
    if (epochs < 1 || batch < 1) throw ContractError("target: epochs and batch must be >= 1");
    if (!(lr > 0.0)) throw ContractError("target: lr must be positive");
    if (!(accuracy_floor >= 0.0 && accuracy_floor <= 1.0)) throw ContractError("target: accuracy_floor in [0,1]");
  }
};

struct TargetReport {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

inline double accuracy(const Mlp& net, const Dataset& data) {
  const auto pred = predict_labels(net, data.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.y[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Cross-entropy SGD on shuffled minibatches. Both initialization and
/// shuffling derive from `seed`.
inline Mlp train_classifier(const Dataset& train, const TargetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<std::size_t> dims{train.x.cols()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(train.n_classes);
  Mlp net = init_mlp(dims, Activation::relu, Rng::substream_seed(seed, "target_init"));
  Rng order_rng = Rng::substream(seed, "target_order");
  SgdState sgd{cfg.lr, cfg.momentum, cfg.weight_decay, {}};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[order_rng.below(i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> labels(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) labels[k] = train.y[idx[k]];
      const Tensor xb = kernels::gather_rows(train.x, idx);
      backward(ce_loss(forward(net, xb), kernels::one_hot(labels, train.n_classes)));
      sgd_step(net, sgd);
    }
  }
  return net;
}

/// Trains the victim and enforces the accuracy floor on the test split.
inline Mlp train_target(const DatasetSplit& data, const TargetConfig& cfg, std::uint64_t seed,
                        TargetReport* report = nullptr) {
  Mlp net = train_classifier(data.train, cfg, seed);
  TargetReport r{accuracy(net, data.train), accuracy(net, data.test)};
  if (report) *report = r;
  if (r.test_accuracy < cfg.accuracy_floor) throw AccuracyFloorError(r.test_accuracy, cfg.accuracy_floor);
  return net;
}

}  // namespace duet
