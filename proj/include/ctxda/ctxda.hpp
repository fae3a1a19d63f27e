// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctxda/binary_io.hpp"
#include "ctxda/charlm.hpp"
#include "ctxda/classifier.hpp"
#include "ctxda/corpus.hpp"
#include "ctxda/csv.hpp"
#include "ctxda/encoder.hpp"
#include "ctxda/error.hpp"
#include "ctxda/gradcheck.hpp"
#include "ctxda/matrix.hpp"
#include "ctxda/numkernel.hpp"
#include "ctxda/rng.hpp"
#include "ctxda/synthetic.hpp"
#include "ctxda/trainer.hpp"
