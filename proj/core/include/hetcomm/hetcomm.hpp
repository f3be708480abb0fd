#pragma once

// Umbrella header for the hetcomm library.

#include "hetcomm/device.hpp"
#include "hetcomm/errors.hpp"
#include "hetcomm/experiment.hpp"
#include "hetcomm/group.hpp"
#include "hetcomm/rendezvous.hpp"
#include "hetcomm/rng.hpp"
#include "hetcomm/sched.hpp"
#include "hetcomm/tensor.hpp"
#include "hetcomm/topology.hpp"
#include "hetcomm/train.hpp"
#include "hetcomm/wire.hpp"
