#include "json_io.hpp"

namespace subvae::detail {

using json = nlohmann::json;

json architecture_json(const Architecture& a) {
  return json{{"channels", a.channels},
              {"image_size", a.image_size},
              {"encoder_channels", a.encoder_channels},
              {"encoder_kernel", a.encoder_kernel},
              {"decoder_kernel", a.decoder_kernel},
              {"stride", a.stride},
              {"padding", a.padding},
              {"classifier_hidden", a.classifier_hidden},
              {"classes", a.classes},
              {"leaky_slope", a.leaky_slope},
              {"bn_momentum", a.bn_momentum},
              {"bn_epsilon", a.bn_epsilon}};
}

json generator_json(const GeneratorConfig& g) {
  return json{{"slides", g.slides},
              {"cells_per_class", g.cells_per_class},
              {"oversample", g.oversample},
              {"excluded_fraction", g.excluded_fraction},
              {"noise", g.noise},
              {"difficulty", g.difficulty},
              {"violation_rate", g.violation_rate},
              {"min_slide_max", g.min_slide_max},
              {"max_slide_max", g.max_slide_max}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  g.slides = j.at("slides").get<Index>();
  g.cells_per_class = j.at("cells_per_class").get<Index>();
  g.oversample = j.at("oversample").get<double>();
  g.excluded_fraction = j.at("excluded_fraction").get<double>();
  g.noise = j.at("noise").get<double>();
  g.difficulty = j.at("difficulty").get<double>();
  g.violation_rate = j.at("violation_rate").get<double>();
  g.min_slide_max = j.at("min_slide_max").get<double>();
  g.max_slide_max = j.at("max_slide_max").get<double>();
  return g;
}

}  // namespace subvae::detail
