#include "semfield/params.hpp"

namespace semfield {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::shape_mapping: return "shape_mapping";
    case ParamGroup::texture_mapping: return "texture_mapping";
    case ParamGroup::trunk: return "trunk";
    case ParamGroup::density_head: return "density_head";
    case ParamGroup::semantic_head: return "semantic_head";
    case ParamGroup::color_branch: return "color_branch";
    case ParamGroup::feature_grid: return "feature_grid";
    case ParamGroup::discriminator: return "discriminator";
  }
  return "unknown";
}

}  // namespace semfield
