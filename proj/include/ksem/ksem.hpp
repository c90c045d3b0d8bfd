#pragma once

// Solvers and evaluation only; include ksem/io.hpp and ksem/cli.hpp for file
// formats and the command-line front end (they need OpenSSL and CLI11).
#include "ksem/admm.hpp"
#include "ksem/datamodel.hpp"
#include "ksem/error.hpp"
#include "ksem/evalkit.hpp"
#include "ksem/group_lasso.hpp"
#include "ksem/kernel.hpp"
#include "ksem/polysem.hpp"
#include "ksem/proxgrad.hpp"
#include "ksem/rng.hpp"
#include "ksem/solvers.hpp"
#include "ksem/synthgen.hpp"
