#include "fairfader/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fairfader {

namespace {

uint64_t name_hash(const char* s) {
  uint64_t h = 1469598103934665603ull;
  for (; *s; ++s) {
    h ^= (unsigned char)*s;
    h *= 1099511628211ull;
  }
  return h;
}

double eval_loss(const ScalarFn& fn, const std::vector<DTensorPtr>& leaves) {
  auto loss = fn(nullptr, leaves);
  return loss->values[0];
}

// Uniform draw bounded away from zero, for kinked activations.
DTensorPtr rand_offset(Shape shape, std::mt19937& rng, double lo = 0.1, double hi = 1.0) {
  auto t = zeros<double>(std::move(shape), true);
  std::uniform_real_distribution<double> mag(lo, hi);
  std::uniform_int_distribution<int> sign(0, 1);
  for (auto& v : t->values) v = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return t;
}

DTensorPtr rand_tensor(Shape shape, std::mt19937& rng, double lo = -1.0, double hi = 1.0,
                       bool requires_grad = true) {
  return uniform<double>(std::move(shape), lo, hi, rng, requires_grad);
}

std::vector<double> rand_projection(int64_t n, std::mt19937& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> w((size_t)n);
  for (auto& v : w) v = dist(rng);
  return w;
}

}  // namespace

double gradcheck_max_rel_err(const ScalarFn& fn, const std::vector<DTensorPtr>& leaves, double h) {
  // analytic pass
  for (auto& l : leaves) l->clear_grad();
  DGraph g;
  auto loss = fn(&g, leaves);
  g.backward(loss);

  double worst = 0.0;
  for (auto& leaf : leaves) {
    if (!leaf->requires_grad) continue;
    leaf->ensure_grad();
    for (size_t i = 0; i < leaf->values.size(); ++i) {
      const double keep = leaf->values[i];
      leaf->values[i] = keep + h;
      const double fp = eval_loss(fn, leaves);
      leaf->values[i] = keep - h;
      const double fm = eval_loss(fn, leaves);
      leaf->values[i] = keep;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = leaf->grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1.0});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, int instances) {
  std::vector<GradCheckResult> results;

  auto run = [&](const char* name, double tol,
                 const std::function<double(std::mt19937&)>& one_instance) {
    std::mt19937 rng((uint32_t)(seed ^ name_hash(name)));
    GradCheckResult r;
    r.op = name;
    r.tol = tol;
    r.instances = instances;
    for (int i = 0; i < instances; ++i) r.max_rel_err = std::max(r.max_rel_err, one_instance(rng));
    r.pass = r.max_rel_err < tol;
    results.push_back(r);
  };

  run("conv2d", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor({2, 3, 6, 6}, rng);
    auto w = rand_tensor({4, 3, 3, 3}, rng);
    auto b = rand_tensor({4}, rng);
    auto proj = rand_projection(2 * 4 * 3 * 3, rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      auto y = conv2d<double>(g, ls[0], ls[1], ls[2], 2, 1);
      return weighted_sum<double>(g, y, proj);
    };
    return gradcheck_max_rel_err(fn, {x, w, b});
  });

  run("deconv2d", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor({2, 4, 3, 3}, rng);
    auto w = rand_tensor({4, 3, 4, 4}, rng);
    auto b = rand_tensor({3}, rng);
    auto proj = rand_projection(2 * 3 * 6 * 6, rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      auto y = deconv2d<double>(g, ls[0], ls[1], ls[2], 2, 1);
      return weighted_sum<double>(g, y, proj);
    };
    return gradcheck_max_rel_err(fn, {x, w, b});
  });

  run("batchnorm2d_train", 1e-3, [](std::mt19937& rng) {
    auto x = rand_tensor({2, 3, 4, 4}, rng);
    auto ga = rand_tensor({3}, rng, 0.5, 1.5);
    auto be = rand_tensor({3}, rng);
    auto proj = rand_projection(2 * 3 * 4 * 4, rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      auto state = make_batchnorm_state<double>(3);
      auto y = batchnorm2d<double>(g, ls[0], ls[1], ls[2], state, Mode::Train);
      return weighted_sum<double>(g, y, proj);
    };
    return gradcheck_max_rel_err(fn, {x, ga, be});
  });

  run("batchnorm2d_eval", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor({2, 3, 4, 4}, rng);
    auto ga = rand_tensor({3}, rng, 0.5, 1.5);
    auto be = rand_tensor({3}, rng);
    auto rm = rand_tensor({3}, rng, -0.5, 0.5, false);
    auto rv = rand_tensor({3}, rng, 0.5, 2.0, false);
    auto proj = rand_projection(2 * 3 * 4 * 4, rng);
    ScalarFn fn = [proj, rm, rv](DGraph* g, const std::vector<DTensorPtr>& ls) {
      BatchNormState<double> state;
      state.running_mean = clone(rm);
      state.running_var = clone(rv);
      auto y = batchnorm2d<double>(g, ls[0], ls[1], ls[2], state, Mode::Eval);
      return weighted_sum<double>(g, y, proj);
    };
    return gradcheck_max_rel_err(fn, {x, ga, be});
  });

  run("activation_relu", 1e-4, [](std::mt19937& rng) {
    auto x = rand_offset({3, 4, 2, 2}, rng);
    auto proj = rand_projection(x->numel(), rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return weighted_sum<double>(g, activation<double>(g, ls[0], Act::relu()), proj);
    };
    return gradcheck_max_rel_err(fn, {x});
  });

  run("activation_leaky_relu", 1e-4, [](std::mt19937& rng) {
    auto x = rand_offset({3, 4, 2, 2}, rng);
    auto proj = rand_projection(x->numel(), rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return weighted_sum<double>(g, activation<double>(g, ls[0], Act::leaky_relu(0.2)), proj);
    };
    return gradcheck_max_rel_err(fn, {x});
  });

  run("activation_tanh", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor({3, 4, 2, 2}, rng, -2.0, 2.0);
    auto proj = rand_projection(x->numel(), rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return weighted_sum<double>(g, activation<double>(g, ls[0], Act::tanh()), proj);
    };
    return gradcheck_max_rel_err(fn, {x});
  });

  run("maxpool2d", 1e-4, [](std::mt19937& rng) {
    // entries spaced apart so the +/-h probes cannot flip an argmax
    auto x = zeros<double>({2, 2, 4, 4}, true);
    std::vector<size_t> order(x->values.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t i = 0; i < order.size(); ++i) x->values[order[i]] = 0.05 * (double)i;
    auto proj = rand_projection(2 * 2 * 2 * 2, rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return weighted_sum<double>(g, maxpool2d<double>(g, ls[0], 2), proj);
    };
    return gradcheck_max_rel_err(fn, {x});
  });

  run("linear", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor({3, 4}, rng);
    auto w = rand_tensor({2, 4}, rng);
    auto b = rand_tensor({2}, rng);
    auto proj = rand_projection(6, rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return weighted_sum<double>(g, linear<double>(g, ls[0], ls[1], ls[2]), proj);
    };
    return gradcheck_max_rel_err(fn, {x, w, b});
  });

  run("dropout", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor({4, 8}, rng);
    const uint32_t mask_seed = rng();
    auto proj = rand_projection(32, rng);
    ScalarFn fn = [proj, mask_seed](DGraph* g, const std::vector<DTensorPtr>& ls) {
      std::mt19937 mask_rng(mask_seed);  // same mask on every evaluation
      return weighted_sum<double>(g, dropout<double>(g, ls[0], 0.4, Mode::Train, mask_rng), proj);
    };
    return gradcheck_max_rel_err(fn, {x});
  });

  run("mse_loss", 1e-4, [](std::mt19937& rng) {
    auto p = rand_tensor({2, 3, 4, 4}, rng);
    auto t = rand_tensor({2, 3, 4, 4}, rng, -1.0, 1.0, false);
    ScalarFn fn = [](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return mse_loss<double>(g, ls[0], ls[1]);
    };
    return gradcheck_max_rel_err(fn, {p, t});
  });

  run("softmax_nll", 1e-4, [](std::mt19937& rng) {
    auto l = rand_tensor({4, 5}, rng, -2.0, 2.0);
    std::uniform_int_distribution<int> lab(0, 4);
    std::vector<int> labels(4);
    for (auto& y : labels) y = lab(rng);
    std::vector<double> weights = {1.0, 0.5, 2.0, 1.5};
    ScalarFn fn = [labels, weights](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return softmax_nll<double>(g, ls[0], labels, &weights);
    };
    return gradcheck_max_rel_err(fn, {l});
  });

  run("softmax_xent_uniform", 1e-4, [](std::mt19937& rng) {
    auto l = rand_tensor({4, 5}, rng, -2.0, 2.0);
    ScalarFn fn = [](DGraph* g, const std::vector<DTensorPtr>& ls) {
      return softmax_xent_uniform<double>(g, ls[0]);
    };
    return gradcheck_max_rel_err(fn, {l});
  });

  run("concat_reshape_scale_add", 1e-4, [](std::mt19937& rng) {
    auto a = rand_tensor({2, 2, 3, 3}, rng);
    auto b = rand_tensor({2, 3, 3, 3}, rng);
    auto proj = rand_projection(2 * 5 * 9, rng);
    ScalarFn fn = [proj](DGraph* g, const std::vector<DTensorPtr>& ls) {
      auto c = concat_channels<double>(g, ls[0], ls[1]);
      auto r = reshape<double>(g, c, {2, 45});
      auto s = scale<double>(g, r, 0.7);
      auto t = add<double>(g, s, s);
      return weighted_sum<double>(g, t, proj);
    };
    return gradcheck_max_rel_err(fn, {a, b});
  });

  run("composite_conv_bn_tanh_linear_nll", 1e-3, [](std::mt19937& rng) {
    auto x = rand_tensor({2, 2, 6, 6}, rng);
    auto w = rand_tensor({3, 2, 3, 3}, rng);
    auto b = rand_tensor({3}, rng);
    auto ga = rand_tensor({3}, rng, 0.5, 1.5);
    auto be = rand_tensor({3}, rng);
    auto fw = rand_tensor({4, 3 * 3 * 3}, rng, -0.5, 0.5);
    auto fb = rand_tensor({4}, rng);
    std::vector<int> labels = {1, 3};
    ScalarFn fn = [labels](DGraph* g, const std::vector<DTensorPtr>& ls) {
      auto state = make_batchnorm_state<double>(3);
      auto h1 = conv2d<double>(g, ls[0], ls[1], ls[2], 2, 1);
      auto h2 = batchnorm2d<double>(g, h1, ls[3], ls[4], state, Mode::Train);
      auto h3 = activation<double>(g, h2, Act::tanh());
      auto h4 = reshape<double>(g, h3, {2, 3 * 3 * 3});
      auto h5 = linear<double>(g, h4, ls[5], ls[6]);
      return softmax_nll<double>(g, h5, labels, nullptr);
    };
    return gradcheck_max_rel_err(fn, {x, w, b, ga, be, fw, fb});
  });

  return results;
}

}  // namespace fairfader
