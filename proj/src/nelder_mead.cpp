#include "bagsoi/nelder_mead.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace bagsoi {

SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                          const Eigen::VectorXd& start, const Eigen::VectorXd& steps,
                          const SimplexOptions& options) {
  const Eigen::Index n = start.size();
  std::vector<Eigen::VectorXd> vertices(static_cast<std::size_t>(n + 1), start);
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  int evaluations = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evaluations;
    return objective(x);
  };

  values[0] = eval(start);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& vertex = vertices[static_cast<std::size_t>(i + 1)];
    vertex(i) += steps(i);
    values[static_cast<std::size_t>(i + 1)] = eval(vertex);
  }

  std::vector<std::size_t> order(vertices.size());
  while (evaluations < options.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];

    double diameter = 0.0;
    for (const auto& v : vertices) diameter = std::max(diameter, (v - vertices[best]).lpNorm<Eigen::Infinity>());
    if (values[worst] - values[best] <= options.f_tolerance && diameter <= options.x_tolerance) break;
    if (diameter <= options.x_tolerance * 1e-3) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (i != worst) centroid += vertices[i];
    }
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + (centroid - vertices[worst]);
    const double f_reflected = eval(reflected);
    if (f_reflected < values[best]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - vertices[worst]);
      const double f_expanded = eval(expanded);
      if (f_expanded < f_reflected) {
        vertices[worst] = expanded;
        values[worst] = f_expanded;
      } else {
        vertices[worst] = reflected;
        values[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < values[second_worst]) {
      vertices[worst] = reflected;
      values[worst] = f_reflected;
      continue;
    }
    const bool outside = f_reflected < values[worst];
    const Eigen::VectorXd contracted =
        outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                : Eigen::VectorXd(centroid + 0.5 * (vertices[worst] - centroid));
    const double f_contracted = eval(contracted);
    if (f_contracted < (outside ? f_reflected : values[worst])) {
      vertices[worst] = contracted;
      values[worst] = f_contracted;
      continue;
    }
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (i == best) continue;
      vertices[i] = vertices[best] + 0.5 * (vertices[i] - vertices[best]);
      values[i] = eval(vertices[i]);
    }
  }

  const auto best_it = std::min_element(values.begin(), values.end());
  const auto index = static_cast<std::size_t>(std::distance(values.begin(), best_it));
  return {vertices[index], *best_it, evaluations};
}

}  // namespace bagsoi
