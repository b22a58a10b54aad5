#pragma once

#include "gridnse/grid_model.hpp"

#include <string>

namespace gridnse {

/// Converts MATPOWER-style case text (mpc.baseMVA / mpc.bus / mpc.gen /
/// mpc.branch matrices) into the native case model. Impedances become
/// per-unit series admittances, the total line charging is split in half per
/// side, shifts come in as degrees, and bus ids are remapped to 0..n-1.
/// Out-of-service branches and generators are dropped.
CaseData convert_matpower_case(const std::string& text);

CaseData load_matpower_file(const std::string& path);

} // namespace gridnse
