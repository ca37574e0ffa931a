#pragma once

#include "ivgen/fpca.hpp"
#include "ivgen/generator.hpp"
#include "ivgen/market_data.hpp"
#include "ivgen/nsde.hpp"
#include "ivgen/stats.hpp"

namespace fixture {

/// Small end-to-end pipeline on the synthetic panel, with an untrained model.
struct Pipeline {
  ivgen::PanelDataset raw;
  ivgen::TransformSpec transforms;
  ivgen::PanelDataset transformed;
  ivgen::FpcaModel fpca;
  ivgen::FpccSeries series;
  ivgen::NsdeModel model;

  explicit Pipeline(int n_dates = 120, std::uint64_t seed = 3, Eigen::Index hidden = 6, Eigen::Index lag = 5) {
    ivgen::SynthConfig cfg;
    cfg.n_dates = n_dates;
    raw = ivgen::synth_market(cfg, seed);
    transforms = ivgen::fit_transforms(raw);
    transformed = ivgen::apply_transforms(raw, transforms, ivgen::Direction::forward);
    fpca = ivgen::fit_fpca(ivgen::project_panel(ivgen::enumerate_basis(4), transformed), 0.995);
    series = ivgen::build_fpcc_series(fpca, transformed);
    ivgen::Rng rng(seed + 100);
    ivgen::NsdeShape shape;
    shape.state_dim = series.states.cols();
    shape.hidden_dim = hidden;
    shape.lag = lag;
    model = ivgen::make_model(shape, rng);
    ivgen::set_normalization(model, series.states);
  }

  Eigen::Index last_index() const { return series.states.rows() - 1; }
  ivgen::Matrix origin() const { return series.states.bottomRows(model.lag); }
};

}  // namespace fixture
