"""Rod model, kinematics, planning, control and bookkeeping services."""
