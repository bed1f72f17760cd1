# QuMERA command line
