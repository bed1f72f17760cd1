# QuMERA file formats
