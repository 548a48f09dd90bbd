#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace p2net::fixtures {

std::filesystem::path data_dir() { return P2NET_TEST_DATA_DIR; }

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    auto dir = data_dir() / "synthetic50";
    auto raw = corpus::load_dialogues(dir / "data.json", dir / "dialogue_acts.json");
    x.records = corpus::split_records(raw);
    x.sets = corpus::build_paraphrase_sets(x.records, 3);
    x.vocab = embedding::Vocabulary::from_corpus(x.records);
    x.types = embedding::SlotTypeTable::from_corpus(x.records);
    return x;
  }();
  return f;
}

const corpus::ParaphraseSet& set_with_slots(std::size_t min_slots) {
  for (const auto& s : fixture().sets) {
    bool ok = std::all_of(s.members.begin(), s.members.end(),
                          [&](const corpus::Record& r) { return r.response.slots.size() >= min_slots; });
    if (ok) return s;
  }
  throw std::runtime_error("fixture has no set with enough slots");
}

std::unique_ptr<P2NetModel> tiny_model(Variant v, std::uint64_t seed, int hidden, int word) {
  ModelConfig c = ModelConfig::small(hidden, word);
  c.variant = v;
  c.seed = seed;
  return std::make_unique<P2NetModel>(c, fixture().vocab, fixture().types);
}

GradCheck grad_check(ad::ParameterCollection& params, const std::vector<std::string>& names,
                     const std::function<ad::Expr(ad::Graph&)>& loss, std::size_t per_param,
                     double h) {
  params.zero_grad();
  {
    ad::Graph g;
    g.backward(loss(g));
  }
  auto eval = [&] {
    ad::Graph g;
    return loss(g).scalar();
  };
  GradCheck out;
  std::mt19937_64 rng(99);
  for (ad::Parameter* p : params.all()) {
    bool wanted = std::any_of(names.begin(), names.end(),
                              [&](const std::string& n) { return p->name().rfind(n, 0) == 0; });
    if (!wanted) continue;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p->value().size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), per_param));
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (auto i : idx) {
      double& x = p->value().data()[i];
      const double orig = x;
      x = orig + h;
      const double up = eval();
      x = orig - h;
      const double down = eval();
      x = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad().data()[i];
      diff += (analytic - numeric) * (analytic - numeric);
      na += analytic * analytic;
      nn += numeric * numeric;
      ++out.checked;
    }
    diff = std::sqrt(diff);
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    const double rel = scale < 1e-9 ? 0.0 : diff / scale;
    if (rel >= out.max_rel) {
      out.max_rel = rel;
      out.worst = p->name();
    }
  }
  return out;
}

}  // namespace p2net::fixtures
