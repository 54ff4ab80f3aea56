#pragma once

#include "blocklmm/blocks.hpp"
#include "blocklmm/data.hpp"
#include "blocklmm/factor.hpp"
#include "blocklmm/fit.hpp"
#include "blocklmm/formula.hpp"
#include "blocklmm/gram.hpp"
#include "blocklmm/lambda.hpp"
#include "blocklmm/report.hpp"
