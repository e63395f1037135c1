from .channel import (ChannelError, ChannelParams, ChannelSnapshot, LinkGain, dbm_to_watts, linear_to_db,
                      los_probability, noise_power_watts, path_loss_gain, sample_nakagami_power,
                      sample_snapshot, shannon_rate, watts_to_dbm)
