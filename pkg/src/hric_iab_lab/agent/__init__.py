from .ddpg import (AdamState, AgentConfig, AgentError, Batch, DdpgAgent, MlpParameters, ReplayBuffer,
                   ReplayUnderfullError, Transition, actor_forward, actor_objective_and_grads, adam_step,
                   critic_forward, critic_loss_and_grads, init_mlp, soft_update, train_step)
