# QuMERA networks
