#include "lrt/gradcheck.hpp"

#include "lrt/layers.hpp"
#include "lrt/model.hpp"
#include "lrt/random.hpp"

namespace lrt {

namespace {

using V = Var<double>;

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

GradcheckResult check(std::string family, const std::function<V()>& f, ParameterSet<double>& ps,
                      double eps, double tol = 1e-5) {
  return {std::move(family), finite_diff_check<double>(f, ps.vars(), eps), tol, ps.names()};
}

}  // namespace

std::string GradcheckResult::worst_name() const {
  return fd.worst_param < param_names.size() ? param_names[fd.worst_param]
                                             : "#" + std::to_string(fd.worst_param);
}

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, double eps) {
  std::vector<GradcheckResult> out;
  Rng rng(seed);

  {
    ParameterSet<double> ps;
    const LedLayer<double> led = make_led(ps, "led", 8, 6, 3, rng);
    for (auto& v : ps.vars()) v.mutable_value() = random_tensor(v.shape(), rng);
    const V x = V::constant(random_tensor({5, 8}, rng));
    const V w = V::constant(random_tensor({5, 6}, rng));
    out.push_back(check("LED", [&] { return ag::sum(ag::mul(led_forward(x, led), w)); }, ps, eps));
  }
  {
    ParameterSet<double> ps;
    const LrmhaParams<double> p = make_lrmha(ps, "mha", 8, 2, 3, rng);
    for (auto& v : ps.vars()) v.mutable_value() = random_tensor(v.shape(), rng);
    const V q = V::constant(random_tensor({4, 8}, rng));
    const V kv = V::constant(random_tensor({5, 8}, rng));
    const AttentionMask mask = AttentionMask::key_padding(4, 5, 4);
    const V w = V::constant(random_tensor({4, 8}, rng));
    out.push_back(
        check("LRMHA", [&] { return ag::sum(ag::mul(lrmha_forward(q, kv, kv, &mask, p), w)); }, ps,
              eps));
  }
  {
    ParameterSet<double> ps;
    std::vector<LrffParams<double>> blocks;
    for (int i = 0; i < 3; ++i) blocks.push_back(make_lrff(ps, "ff" + std::to_string(i), 8, 8, 3, rng));
    for (auto& v : ps.vars()) v.mutable_value() = random_tensor(v.shape(), rng);
    const V x = V::constant(random_tensor({5, 8}, rng));
    const V w = V::constant(random_tensor({5, 8}, rng));
    out.push_back(check(
        "LRFF",
        [&] {
          V y = x;
          for (const auto& b : blocks) y = lrff_forward(y, b);
          return ag::sum(ag::mul(y, w));
        },
        ps, eps));
  }

  ModelConfig micro;
  micro.enc_layers = 1;
  micro.dec_layers = 1;
  micro.d_model = 8;
  micro.d_emb = 8;
  micro.d_inner = 8;
  micro.heads = 2;
  micro.rank = 3;
  micro.vocab_size = 5;
  micro.freq_bins = 8;
  micro.conv_channels = {4, 4, 4};
  micro.max_src_frames = 64;
  micro.max_tgt_len = 8;
  micro.factorize_output = true;
  {
    LrtModel<double> model(micro, rng.next_u64());
    const Tensor<double> feats = random_tensor({12, 8}, rng);
    const V w = V::constant(random_tensor({3, 8}, rng));
    std::vector<V> frontend(model.conv_kernels);
    frontend.insert(frontend.end(), model.conv_biases.begin(), model.conv_biases.end());
    frontend.push_back(model.frontend_proj.weight);
    frontend.push_back(model.frontend_proj.bias);
    for (auto& v : frontend) v.mutable_value() = random_tensor(v.shape(), rng);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < 3 * 2; ++i) names.push_back("frontend.conv" + std::to_string(i) + ".kernel");
    for (std::size_t i = 0; i < 3 * 2; ++i) names.push_back("frontend.conv" + std::to_string(i) + ".bias");
    names.push_back("frontend.proj.W");
    names.push_back("frontend.proj.bias");
    out.push_back({"frontend",
                   finite_diff_check<double>(
                       [&] { return ag::sum(ag::mul(vgg_frontend(model, feats, 10), w)); }, frontend,
                       eps),
                   1e-5, names});
  }
  {
    ParameterSet<double> ps;
    const V logits = ps.add("logits", random_tensor({4, 5}, rng));
    const std::vector<int> targets{3, 0, 4, 2};
    out.push_back(check("loss", [&] { return cross_entropy_loss(logits, targets); }, ps, eps));
  }
  {
    LrtModel<double> model(micro, rng.next_u64());
    const auto& names = model.params.names();
    for (std::size_t i = 0; i < names.size(); ++i) {
      Var<double>& v = model.params.vars()[i];
      if (v.shape().size() != 1) continue;
      const bool gain = names[i].ends_with(".gain");
      for (auto& x : v.mutable_value().data()) x = (gain ? 1.0 : 0.0) + rng.uniform(-0.5, 0.5);
    }
    const std::vector<Tensor<double>> feats{random_tensor({32, 8}, rng), random_tensor({24, 8}, rng)};
    const std::vector<std::vector<int>> text{{3, 4, 3}, {4}};
    const Batch<double> batch = make_batch<double>(feats, text);
    out.push_back(check("model", [&] { return batch_loss(model, batch); }, model.params, eps, 1e-4));
  }
  return out;
}

}  // namespace lrt
