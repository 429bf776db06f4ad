# multilevel_qi 测试包
