#pragma once

#include "beltrami.hpp"
#include "cauchy.hpp"
#include "core.hpp"
#include "fields.hpp"
#include "lab.hpp"
#include "mesh.hpp"
#include "operators.hpp"
#include "reduction.hpp"
