#include <gtest/gtest.h>

#include <filesystem>

#include "growth/error.hpp"
#include "growth/model_io.hpp"
#include "support.hpp"

using namespace growth;
using namespace growth::magma;

TEST(ModelIo, RoundTripPreservesPredictions) {
  ModelConfig c;
  c.n_clusters = 2;
  c.max_vem_iters = 4;
  c.working_grid.clear();
  for (double t = 0; t <= 120; t += 6) c.working_grid.push_back(t);
  const auto m = train(fixture::small_cohort(20, 2).cohort, c);
  const auto back = model_from_json(model_to_json(m));
  EXPECT_EQ(back.ids, m.ids);
  EXPECT_EQ(back.iterations, m.iterations);
  EXPECT_EQ(back.training_log, m.training_log);
  EXPECT_LT((back.memberships - m.memberships).cwiseAbs().maxCoeff(), 1e-12);
  for (std::size_t k = 0; k < m.n_clusters(); ++k) {
    EXPECT_LT((back.hyper_posteriors[k].covariance - m.hyper_posteriors[k].covariance)
                  .cwiseAbs().maxCoeff(), 1e-12);
  }
  const std::vector<double> a = {6, 30}, y = {17.0, 16.0}, t = {60, 120};
  const auto p = predict(m, a, y, t);
  const auto q = predict(back, a, y, t);
  EXPECT_LT((p.mean() - q.mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((p.variance() - q.variance()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(model_to_json(back), model_to_json(m));

  const auto path = std::filesystem::temp_directory_path() / "growth_model_io_test.json";
  save_model(m, path);
  EXPECT_EQ(model_to_json(load_model(path)), model_to_json(m));
  std::filesystem::remove(path);
}

TEST(ModelIo, RejectsForeignDocuments) {
  EXPECT_ANY_THROW(model_from_json("{\"format\": \"other\", \"version\": 1}"));
  EXPECT_ANY_THROW(model_from_json("not json"));
  EXPECT_THROW(load_model("/nonexistent/model.json"), FileNotFound);
}
