#pragma once

#include "hyperinvert/core/autodiff.hpp"
#include "hyperinvert/core/common.hpp"
#include "hyperinvert/core/image_io.hpp"
#include "hyperinvert/core/nn.hpp"
#include "hyperinvert/core/ops.hpp"
#include "hyperinvert/core/optim.hpp"
#include "hyperinvert/core/random.hpp"
#include "hyperinvert/core/serialize.hpp"
#include "hyperinvert/core/tensor.hpp"
#include "hyperinvert/editing.hpp"
#include "hyperinvert/encoder.hpp"
#include "hyperinvert/generator.hpp"
#include "hyperinvert/genspec.hpp"
#include "hyperinvert/hypernet.hpp"
#include "hyperinvert/inversion.hpp"
#include "hyperinvert/losses.hpp"
#include "hyperinvert/modulation.hpp"
#include "hyperinvert/trainer.hpp"
