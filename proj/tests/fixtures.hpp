#pragma once

#include <string>
#include <vector>

#include "fedsn/federation.hpp"
#include "fedsn/supernet.hpp"
#include "fedsn/synth_data.hpp"

namespace fedsn::testing {

inline TrainConfig<double> small_train_config() {
  TrainConfig<double> t;
  t.crops_per_image = 1;
  t.images_per_batch = 2;
  t.crop_size = {16, 16};
  return t;
}

inline std::vector<Case<double>> site_cases(std::size_t site, std::size_t count, std::uint64_t seed) {
  SiteProfile p = default_site_profiles().at(site);
  p.case_count = count;
  std::vector<Case<double>> out;
  for (auto& c : generate_site<double>(p, Shape{32, 32}, seed)) out.push_back(normalize(std::move(c)));
  return out;
}

inline Client<double> make_client(const std::string& id, std::size_t site, const SupernetModel<double>& prototype,
                                  std::uint64_t seed, TrainConfig<double> train = small_train_config(),
                                  std::size_t count = 12) {
  auto cases = site_cases(site, count, seed);
  SplitSet s = split(cases.size(), seed);
  return Client<double>(id, std::move(cases), std::move(s), prototype, std::move(train), seed);
}

}  // namespace fedsn::testing
