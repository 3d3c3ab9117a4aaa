// Design two successive displays on a synthetic pool and ground them to pool samples.
#include "lfal/lfal.hpp"

#include <cstdio>

int main() {
  lfal::Rng rng(3);
  lfal::SynthSpec spec;
  spec.classes = 5;
  spec.per_class = 20;
  spec.noise = 1.0;
  const lfal::Pool pool = lfal::synth_pool(spec, rng);

  std::vector<char> labeled(std::size_t(pool.size()), 0);
  lfal::Matrix H(pool.dim(), 0);
  for (int t = 0; t < 2; ++t) {
    const lfal::DisplayState st = lfal::design_display(pool.flat, H, 5, rng);
    const lfal::Grounding g = lfal::ground_exemplars(st.V, pool.flat, labeled);
    std::printf("display %d: %d iterations%s, picks", t, st.iteration, st.converged ? "" : " (not converged)");
    for (int i : g.indices) {
      std::printf(" %d(class %d)", i, pool.labels[std::size_t(i)]);
      labeled[std::size_t(i)] = 1;
    }
    std::printf("\n");
    H.conservativeResize(Eigen::NoChange, H.cols() + st.V.cols());
    H.rightCols(st.V.cols()) = st.V;
  }
}
