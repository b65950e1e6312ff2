#pragma once

#include "compatpg/critic.hpp"
#include "compatpg/experiment.hpp"
#include "compatpg/gradient.hpp"
#include "compatpg/mdp.hpp"
#include "compatpg/policy.hpp"
#include "compatpg/rollout.hpp"
