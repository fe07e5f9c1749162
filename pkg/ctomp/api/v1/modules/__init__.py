# Domain modules package
