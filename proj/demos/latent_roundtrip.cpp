// Map a synthetic pool into the latent space of a random orthonormal stack,
// certify the stack, and map it back.
#include "lfal/lfal.hpp"

#include <cstdio>

int main() {
  lfal::Rng rng(7);
  lfal::SynthSpec spec;
  spec.classes = 4;
  spec.per_class = 10;
  const lfal::Pool pool = lfal::synth_pool(spec, rng);

  const lfal::LayerStack net = lfal::make_stack(pool.dim(), 3, {}, 1.0 / double(pool.dim()), rng);
  const lfal::LipschitzCertificate cert = lfal::certify(net, rng, 2000);
  std::printf("K bound %.4f, sampled %.4f\n", cert.K_bound, cert.K_emp);
  std::printf("M bound %.4f, sampled %.4f\n", cert.M_bound, cert.M_emp);

  const lfal::Matrix Z = lfal::latent_map(net, pool.flat);
  const lfal::Matrix back = lfal::latent_unmap(net, Z, cert);
  std::printf("pool %ld x %ld, round-trip error %.3e\n", long(pool.flat.rows()), long(pool.flat.cols()),
              (back - pool.flat).cwiseAbs().maxCoeff());
}
