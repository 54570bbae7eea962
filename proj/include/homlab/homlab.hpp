#pragma once

#include "homlab/error.hpp"
#include "homlab/truncate.hpp"
#include "homlab/mesh.hpp"
#include "homlab/fe_function.hpp"
#include "homlab/sparse.hpp"
#include "homlab/domain.hpp"
#include "homlab/fem.hpp"
#include "homlab/parallel.hpp"
#include "homlab/singular.hpp"
#include "homlab/corrector.hpp"
#include "homlab/harness.hpp"
