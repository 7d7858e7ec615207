#pragma once

#include <qkit/bias_correction.hpp>
#include <qkit/breakpoint_solver.hpp>
#include <qkit/calibration.hpp>
#include <qkit/datapath.hpp>
#include <qkit/distributions.hpp>
#include <qkit/error.hpp>
#include <qkit/error_analysis.hpp>
#include <qkit/pipeline.hpp>
#include <qkit/pwlq.hpp>
#include <qkit/quant_io.hpp>
#include <qkit/quantized_tensor.hpp>
#include <qkit/recipe.hpp>
#include <qkit/tensor.hpp>
#include <qkit/uniform_quant.hpp>
