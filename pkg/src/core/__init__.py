# QuMERA core tensor algebra
