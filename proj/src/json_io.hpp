#pragma once

#include <nlohmann/json.hpp>

#include "subvae/data.hpp"
#include "subvae/model.hpp"

namespace subvae::detail {

nlohmann::json architecture_json(const Architecture& a);
nlohmann::json generator_json(const GeneratorConfig& g);
GeneratorConfig generator_from_json(const nlohmann::json& j);

}  // namespace subvae::detail
