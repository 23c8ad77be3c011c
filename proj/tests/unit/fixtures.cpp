#include "helpers.hpp"

namespace testutil {

const TrainedFixture& trained_fixture() {
  static const TrainedFixture fixture = [] {
    auto data = synthetic_examples(500, 101);
    auto held = synthetic_examples(200, 202);
    dnas::ControllerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.batch_size = 16;
    cfg.epochs = 150;
    auto ctl = dnas::train(data, cfg, 5).controller;
    return TrainedFixture{std::move(data), std::move(held), std::move(ctl)};
  }();
  return fixture;
}

}  // namespace testutil
