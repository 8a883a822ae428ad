var vendor = 1;
