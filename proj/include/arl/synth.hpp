#pragma once

// Synthetic identity data on the observation sphere. Each ethnicity group
// owns a low-dimensional subspace (optionally mixed with shared directions
// so groups overlap a little); identities are unit directions inside their
// group subspace and images are the identity mean plus isotropic Gaussian
// noise, normalized downstream by the embedding.

#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "arl/core.hpp"
#include "arl/rng.hpp"

namespace arl {

struct GroupSpec {
  std::string tag;
  int identity_count = 0;        // training identities
  int images_per_identity = 4;
  std::uint64_t subspace_seed = 0;
  int subspace_dim = 4;
  double gender_mix = 0.5;       // fraction of male identities
  double labeled_fraction = 1.0; // leading fraction of train identities that get labels
  int test_identity_count = 0;   // held-out identities, disjoint from training
  int test_images_per_identity = 4;
};

struct PopulationSpec {
  std::vector<GroupSpec> groups;
  int observation_dim = 24;
  double intra_class_noise = 0.4;  // sigma of per-image Gaussian noise
  double subspace_overlap = 0.2;   // mixing weight toward shared directions
  // Identities within a group are resampled until their mean directions stay
  // below this pairwise cosine, so no two synthetic people nearly coincide.
  double max_identity_cosine = 0.6;
};

struct Dataset {
  std::vector<LabeledSample> labeled;
  std::vector<UnlabeledSample> unlabeled;
  std::vector<TestImage> test_images;
  int n_classes = 0;
  std::vector<std::string> group_tags;
  // Generator metadata: labeled class means and per-class group/gender, kept
  // for overlap planting and test assertions.
  std::vector<Vec> class_means;
  std::vector<std::string> class_ethnicity;
  std::vector<double> class_gender_base;
  int next_pseudo_id = 0;
};

namespace detail {

// Orthonormal basis spanning the group subspace: Gaussian columns supported
// on the group's coordinate block, mixed with full-support shared Gaussian
// directions by `overlap`, then Gram-Schmidt.
inline std::vector<Vec> group_basis(int obs_dim, int block_offset, int q, double overlap,
                                    Rng own, Rng shared) {
  std::vector<Vec> basis;
  for (int k = 0; k < q; ++k) {
    Vec v(obs_dim, 0.0);
    for (int i = 0; i < q; ++i) v[block_offset + i] = (1.0 - overlap) * own.normal();
    for (int i = 0; i < obs_dim; ++i) v[i] += overlap * shared.normal();
    for (const Vec& b : basis) axpy(-dot(v, b), b, v);
    double n = l2_norm(v);
    if (n <= kNormEps) throw InvalidSpec("group_basis: degenerate direction");
    scale(1.0 / n, v);
    basis.push_back(std::move(v));
  }
  return basis;
}

inline Vec identity_mean(const std::vector<Vec>& basis, Rng& rng) {
  Vec mean(basis[0].size(), 0.0);
  for (const Vec& b : basis) axpy(rng.normal(), b, mean);
  double n = l2_norm(mean);
  if (n <= kNormEps) return identity_mean(basis, rng);
  scale(1.0 / n, mean);
  return mean;
}

// Identity mean kept away from previously drawn identities of the group;
// falls back to the best candidate seen if the cap is unreachable.
inline Vec separated_identity_mean(const std::vector<Vec>& basis, const std::vector<Vec>& taken,
                                   double max_cosine, Rng& rng) {
  Vec best;
  double best_worst = 2.0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    Vec mean = identity_mean(basis, rng);
    double worst = -1.0;
    for (const Vec& other : taken) worst = std::max(worst, dot(mean, other));
    if (worst < max_cosine) return mean;
    if (worst < best_worst) {
      best_worst = worst;
      best = std::move(mean);
    }
  }
  return best;
}

inline Vec noisy_image(const Vec& mean, double sigma, Rng& rng) {
  Vec obs = mean;
  for (double& x : obs) x += sigma * rng.normal();
  return obs;
}

inline double gender_score_for(bool male, Rng& rng) {
  double s = (male ? 0.85 : 0.15) + 0.15 * rng.normal();
  return std::clamp(s, 0.0, 1.0);
}

}  // namespace detail

inline void validate(const PopulationSpec& spec) {
  if (spec.groups.empty()) throw InvalidSpec("population: no groups");
  if (spec.observation_dim < 2) throw InvalidSpec("population: observation_dim < 2");
  if (!(spec.intra_class_noise > 0.0)) throw InvalidSpec("population: sigma must be > 0");
  int used = 0;
  for (const GroupSpec& g : spec.groups) {
    if (g.identity_count < 1) throw InvalidSpec("group " + g.tag + ": identity_count < 1");
    if (g.subspace_dim < 1) throw InvalidSpec("group " + g.tag + ": subspace_dim < 1");
    if (g.labeled_fraction < 0.0 || g.labeled_fraction > 1.0)
      throw InvalidSpec("group " + g.tag + ": labeled_fraction");
    used += g.subspace_dim;
  }
  if (used > spec.observation_dim)
    throw InvalidSpec("population: subspace blocks exceed observation_dim");
}

inline Dataset generate_population(const PopulationSpec& spec, Rng& rng) {
  validate(spec);
  Dataset ds;
  Rng shared_rng = rng.split("shared-subspace");
  int block_offset = 0;
  int test_identity = 1 << 20;  // test ids live far above labeled class ids

  for (size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const GroupSpec& g = spec.groups[gi];
    ds.group_tags.push_back(g.tag);
    Rng grng = rng.split(g.subspace_seed ^ detail::fnv1a64(g.tag));
    auto basis = detail::group_basis(spec.observation_dim, block_offset, g.subspace_dim,
                                     spec.subspace_overlap, Rng(g.subspace_seed),
                                     shared_rng.split(gi));
    block_offset += g.subspace_dim;

    int labeled_ids = static_cast<int>(std::lround(g.labeled_fraction * g.identity_count));
    Rng id_rng = grng.split("identities");
    Rng img_rng = grng.split("images");
    Rng gender_rng = grng.split("gender");
    std::vector<Vec> group_means;

    for (int id = 0; id < g.identity_count; ++id) {
      Vec mean = detail::separated_identity_mean(basis, group_means, spec.max_identity_cosine,
                                                 id_rng);
      group_means.push_back(mean);
      bool male = gender_rng.uniform() < g.gender_mix;
      bool is_labeled = id < labeled_ids;
      int class_id = -1;
      if (is_labeled) {
        class_id = ds.n_classes++;
        ds.class_means.push_back(mean);
        ds.class_ethnicity.push_back(g.tag);
        ds.class_gender_base.push_back(male ? 0.85 : 0.15);
      }
      for (int im = 0; im < g.images_per_identity; ++im) {
        Vec obs = detail::noisy_image(mean, spec.intra_class_noise, img_rng);
        double score = detail::gender_score_for(male, gender_rng);
        if (is_labeled) {
          ds.labeled.push_back({obs, class_id, g.tag, score});
        } else {
          ds.unlabeled.push_back(
              {obs, ds.next_pseudo_id++, g.tag, score, l2_norm(obs), -1});
        }
      }
    }

    Rng test_rng = grng.split("test");
    for (int id = 0; id < g.test_identity_count; ++id) {
      Vec mean = detail::separated_identity_mean(basis, group_means, spec.max_identity_cosine,
                                                 test_rng);
      group_means.push_back(mean);
      int ident = test_identity++;
      for (int im = 0; im < g.test_images_per_identity; ++im)
        ds.test_images.push_back(
            {detail::noisy_image(mean, spec.intra_class_noise, test_rng), ident, g.tag});
    }
  }
  return ds;
}

// Contaminates the unlabeled pool with `count` extra samples drawn from
// randomly chosen labeled identities, so the overlap filter has something
// real to remove. Each planted sample records its source class in
// planted_class; training code never reads that field.
inline std::vector<UnlabeledSample> plant_overlap(const Dataset& ds,
                                                  const std::vector<UnlabeledSample>& pool,
                                                  int count, double sigma, Rng& rng) {
  if (count < 0 || count > ds.n_classes)
    throw InvalidSpec("plant_overlap: count must be in [0, n_classes]");
  std::vector<UnlabeledSample> out = pool;
  int next_id = ds.next_pseudo_id;
  for (const UnlabeledSample& u : pool) next_id = std::max(next_id, u.pseudo_id + 1);

  std::vector<int> classes(ds.n_classes);
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes);
  for (int k = 0; k < count; ++k) {
    int cls = classes[k];
    Vec obs = detail::noisy_image(ds.class_means[cls], sigma, rng);
    double score =
        detail::gender_score_for(ds.class_gender_base[cls] > 0.5, rng);
    out.push_back({obs, next_id++, ds.class_ethnicity[cls], score, l2_norm(obs), cls});
  }
  return out;
}

}  // namespace arl
