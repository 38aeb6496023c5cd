#pragma once

#include "masrc/data_io.hpp"
#include "masrc/ejg.hpp"
#include "masrc/error.hpp"
#include "masrc/grad_check.hpp"
#include "masrc/kernel.hpp"
#include "masrc/mcd.hpp"
#include "masrc/metrics.hpp"
#include "masrc/model.hpp"
#include "masrc/model_check.hpp"
#include "masrc/param_store.hpp"
#include "masrc/pcg.hpp"
#include "masrc/synth.hpp"
#include "masrc/tensor.hpp"
#include "masrc/training.hpp"
